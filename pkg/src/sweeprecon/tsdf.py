"""Truncated signed distance volumes and deterministic decoders.

``integrate_depth`` is classic depth-map fusion: every voxel in front of (or
within one truncation band behind) a measured surface receives the clamped,
normalized signed distance under a constant-weight running mean.  Values
live in [-1, 1] in units of the truncation distance; never-seen voxels stay
at +1 with weight 0.

Two decoders replace a learned prediction head:

- ``decode_depth_softargmax`` turns one confidence channel of a (compensated)
  cost volume into a per-pixel depth map via a temperature softmax over
  planes and an expectation in log-depth space.
- ``decode_volume`` reads one channel of a fused feature grid as a surface
  score and maps it through clamp((iso - score) / scale, -1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, DepthPlanes, project_array
from .fusion import VoxelGrid, make_grid

DEFAULT_VOXEL_SIZE = 0.04  # meters
DEFAULT_TRUNC_FACTOR = 3  # trunc = factor * voxel_size
DEFAULT_TAU = 0.05  # softmax temperature on dot-product confidences


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray  # (H, W) float32 meters, 0 = invalid
    camera: Camera

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 2:
            raise ValueError("depth map must be 2D")
        if np.any(vals < 0):
            raise ValueError("depth values must be >= 0")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class TsdfVolume:
    grid: VoxelGrid  # channels = 1; data in [-1, 1], +1 where unobserved
    trunc: float  # meters

    def __post_init__(self):
        if self.grid.channels != 1:
            raise ValueError("TSDF volume needs a single-channel grid")
        if self.trunc <= 0:
            raise ValueError("truncation distance must be positive")

    @property
    def values(self) -> np.ndarray:
        return self.grid.data[0]

    @property
    def weight(self) -> np.ndarray:
        return self.grid.weight


def make_tsdf(origin, dims, voxel_size: float = DEFAULT_VOXEL_SIZE,
              trunc: float | None = None) -> TsdfVolume:
    if trunc is None:
        trunc = DEFAULT_TRUNC_FACTOR * voxel_size
    grid = make_grid(origin, dims, voxel_size, channels=1, fill=1.0)
    return TsdfVolume(grid=grid, trunc=float(trunc))


def integrate_depth(vol: TsdfVolume, depth: DepthMap) -> TsdfVolume:
    """Fuse one depth map into the volume (in place; returns vol).

    Voxels whose signed distance to the measured surface is >= -trunc get
    value <- running mean of clamp(sdf / trunc, -1, 1) and weight += 1.
    """
    cam = depth.camera
    centers = vol.grid.voxel_centers()
    uv, z, in_front = project_array(cam, centers)
    with np.errstate(invalid="ignore"):
        u = np.round(uv[:, 0]).astype(np.int64)
        v = np.round(uv[:, 1]).astype(np.int64)
    u = np.clip(u, 0, cam.width - 1)
    v = np.clip(v, 0, cam.height - 1)
    inside = (in_front
              & (uv[:, 0] >= -0.5) & (uv[:, 0] <= cam.width - 0.5)
              & (uv[:, 1] >= -0.5) & (uv[:, 1] <= cam.height - 0.5))
    measured = depth.values[v, u].astype(np.float64)
    usable = inside & (measured > 0)
    sdf = measured - z
    usable &= sdf >= -vol.trunc

    sample = np.clip(sdf / vol.trunc, -1.0, 1.0)
    flat_val = vol.grid.data[0].reshape(-1)
    flat_w = vol.grid.weight.reshape(-1)
    idx = np.nonzero(usable)[0]
    w_old = flat_w[idx].astype(np.float64)
    old = np.where(w_old > 0, flat_val[idx], 0.0)
    flat_val[idx] = ((old * w_old + sample[idx]) / (w_old + 1.0)).astype(np.float32)
    flat_w[idx] = (w_old + 1.0).astype(np.float32)
    vol.grid.observed[...] = vol.grid.weight > 0
    return vol


def integrate_sequence(vol: TsdfVolume, depths: list[DepthMap]) -> TsdfVolume:
    """Integrate depth maps in list order (fixed order => byte-exact reruns)."""
    for d in depths:
        integrate_depth(vol, d)
    return vol


def mark_unobserved_columns(vol: TsdfVolume, gravity_axis: int = 2) -> TsdfVolume:
    """Set never-observed vertical columns to unoccupied (+1, unobserved)."""
    if gravity_axis not in (0, 1, 2):
        raise ValueError("gravity_axis must be 0, 1, or 2")
    col_weight = vol.grid.weight.sum(axis=gravity_axis, keepdims=True)
    empty = np.broadcast_to(col_weight == 0, vol.grid.weight.shape)
    vol.grid.data[0][empty] = 1.0
    vol.grid.observed[empty] = False
    return vol


def decode_depth_softargmax(volume, planes: DepthPlanes, confidence_channel: int,
                            camera: Camera, tau: float = DEFAULT_TAU) -> DepthMap:
    """Soft-argmax depth from one confidence channel of a cost volume.

    ``volume`` is anything with (planes, C, H, W) ``.data`` and a
    (planes, H, W) ``.valid_mask``.  Per pixel, a softmax over the valid
    planes (temperature tau) weights the plane log-depths; the expectation is
    exponentiated back to meters.  Pixels with no valid plane decode to 0.
    """
    data = volume.data
    mask = volume.valid_mask
    if not (-data.shape[1] <= confidence_channel < data.shape[1]):
        raise ValueError(f"confidence channel {confidence_channel} out of range "
                         f"for {data.shape[1]} channels")
    if tau <= 0:
        raise ValueError("tau must be positive")
    conf = data[:, confidence_channel, :, :].astype(np.float64)
    neg = np.where(mask, conf / tau, -np.inf)
    peak = neg.max(axis=0)
    any_valid = np.isfinite(peak)
    with np.errstate(invalid="ignore"):
        w = np.exp(neg - np.where(any_valid, peak, 0.0))
    w[:, ~any_valid] = 0.0
    total = w.sum(axis=0)
    log_d = np.log(planes.values)
    with np.errstate(invalid="ignore", divide="ignore"):
        expect = np.einsum("dhw,d->hw", w, log_d) / total
    depth = np.where(any_valid & (total > 0), np.exp(expect), 0.0)
    return DepthMap(values=depth.astype(np.float32), camera=camera)


def peak_confidence(volume, channel: int = -1) -> np.ndarray:
    """Max confidence over valid planes per pixel, 0 where no plane is valid."""
    conf = volume.data[:, channel, :, :]
    masked = np.where(volume.valid_mask, conf, -np.inf)
    peak = masked.max(axis=0)
    return np.where(np.isfinite(peak), peak, 0.0).astype(np.float32)


def decode_volume(grid: VoxelGrid, score_channel: int, iso: float,
                  scale: float, trunc: float | None = None) -> TsdfVolume:
    """Pseudo-TSDF from a fused feature grid: clamp((iso - score)/scale).

    Observed voxels get the clamped score margin; unobserved voxels stay +1.
    The isosurface of the result sits where score == iso.
    """
    if not (-grid.channels <= score_channel < grid.channels):
        raise ValueError(f"score channel {score_channel} out of range "
                         f"for {grid.channels} channels")
    if scale <= 0:
        raise ValueError("scale must be positive")
    score = grid.data[score_channel]
    pseudo = np.where(grid.observed,
                      np.clip((iso - score) / scale, -1.0, 1.0),
                      1.0).astype(np.float32)
    out = make_grid(grid.origin, grid.dims, grid.voxel_size, channels=1, fill=1.0)
    out.data[0] = pseudo
    out.weight[...] = grid.weight
    out.observed[...] = grid.observed
    if trunc is None:
        trunc = DEFAULT_TRUNC_FACTOR * grid.voxel_size
    return TsdfVolume(grid=out, trunc=float(trunc))
