"""Deterministic matching descriptors at 1/8 image resolution.

Stands in for a learned matching encoder: every 8x8 pixel block becomes one
feature cell whose descriptor is unit L2 norm, so the dot product of a cell
with itself is exactly 1 and cross-view dot products are calibrated
confidences in [-1, 1].

Two descriptor kinds:

- ``patch``: block pixels normalized by block mean/std, plus a constant
  component, then a seeded row-orthonormal projection to the requested
  channel count.  The constant component keeps flat blocks well-defined
  (they all map to the same unit descriptor instead of 0/0).
- ``grad``: an orientation histogram of image gradients inside the block,
  magnitude-weighted with soft bin assignment, plus the same constant
  component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import Camera, DepthPlanes, unproject_array

EPS_STD = 1e-6  # floor on block standard deviation
_EPS_NORM = 1e-12

METADATA_CHANNELS = 6  # ray xyz, ray angle, baseline, plane depth


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "patch"  # "patch" | "grad"
    patch: int = 3  # smoothing window in pixels
    out_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("patch", "grad"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError("patch must be odd and >= 3")
        if self.out_channels < 1:
            raise ValueError("out_channels must be >= 1")
        if self.kind == "grad" and self.out_channels < 2:
            raise ValueError("grad encoder needs >= 2 channels")


@dataclass(frozen=True)
class FeatureMap:
    height: int
    width: int
    channels: int
    data: np.ndarray  # (channels, height, width) float32

    def __post_init__(self):
        if self.data.shape != (self.channels, self.height, self.width):
            raise ValueError(f"feature data shape {self.data.shape} does not match "
                             f"({self.channels}, {self.height}, {self.width})")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature map contains non-finite values")


def seeded_orthonormal_map(rows: int, cols: int, seed: int | np.random.Generator,
                           passthrough: int | None = None) -> np.ndarray:
    """Row-orthonormal (rows, cols) matrix from a seeded Gaussian QR.

    With ``passthrough=j`` the last row is the unit vector e_j, so output
    channel -1 copies input channel j exactly; the remaining rows stay
    orthonormal and orthogonal to it.
    """
    if rows > cols:
        raise ValueError(f"cannot build {rows} orthonormal rows in dimension {cols}")
    rng = np.random.default_rng(seed)
    if passthrough is None:
        g = rng.standard_normal((cols, rows))
        q, r = np.linalg.qr(g)
        q = q * np.where(np.diag(r) >= 0, 1.0, -1.0)
        return np.ascontiguousarray(q.T)
    if not (0 <= passthrough < cols):
        raise ValueError(f"passthrough index {passthrough} out of range for {cols} columns")
    e = np.zeros(cols)
    e[passthrough] = 1.0
    if rows == 1:
        return e[None, :]
    g = rng.standard_normal((cols, rows - 1))
    g -= np.outer(e, e @ g)
    q, r = np.linalg.qr(g)
    q = q * np.where(np.diag(r) >= 0, 1.0, -1.0)
    return np.ascontiguousarray(np.vstack([q.T, e[None, :]]))


def to_gray(image: np.ndarray) -> np.ndarray:
    """sRGB uint8 (H, W, 3) -> luma in [0, 1], float64."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    return img @ np.array([0.299, 0.587, 0.114])


def _blockify(arr: np.ndarray) -> np.ndarray:
    """(H, W) -> (H/8, W/8, 64) of raster-ordered block pixels."""
    h, w = arr.shape
    return arr.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(h // 8, w // 8, 64)


def encode(frame, spec: EncoderSpec, projection: np.ndarray | None = None) -> FeatureMap:
    """Per-cell unit-norm descriptors of an RGB frame at 1/8 resolution.

    ``projection`` optionally replaces the seeded projection of the patch
    kind with a loaded (out_channels, 65) matrix.
    """
    image = frame.image if hasattr(frame, "image") else np.asarray(frame)
    h, w = image.shape[:2]
    if h % 8 or w % 8:
        raise ValueError(f"image dims {w}x{h} are not divisible by 8")
    gray = to_gray(image)
    smooth = ndimage.uniform_filter(gray, size=spec.patch, mode="reflect")

    if spec.kind == "patch":
        raw = _descriptors_patch(smooth, spec, projection)
    else:
        raw = _descriptors_grad(smooth, spec)

    norms = np.sqrt((raw * raw).sum(axis=-1, keepdims=True))
    feats = raw / np.maximum(norms, _EPS_NORM)
    data = np.ascontiguousarray(feats.transpose(2, 0, 1).astype(np.float32))
    return FeatureMap(height=h // 8, width=w // 8, channels=spec.out_channels, data=data)


def _descriptors_patch(gray: np.ndarray, spec: EncoderSpec,
                       projection: np.ndarray | None) -> np.ndarray:
    blocks = _blockify(gray)
    mean = blocks.mean(axis=-1, keepdims=True)
    std = blocks.std(axis=-1, keepdims=True)
    normed = (blocks - mean) / np.maximum(std, EPS_STD)
    vec = np.concatenate([normed, np.ones(normed.shape[:2] + (1,))], axis=-1)  # + DC
    if projection is None:
        projection = seeded_orthonormal_map(spec.out_channels, 65, spec.seed)
    elif projection.shape != (spec.out_channels, vec.shape[-1]):
        raise ValueError(f"projection shape {projection.shape} does not match "
                         f"({spec.out_channels}, {vec.shape[-1]})")
    return vec @ projection.T


def _descriptors_grad(gray: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    nbins = spec.out_channels - 1
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    pos = ang / (2.0 * np.pi) * nbins
    lo = np.floor(pos).astype(np.int64) % nbins
    frac = pos - np.floor(pos)

    h, w = gray.shape
    hist = np.zeros((h, w, nbins))
    rows, cols = np.indices((h, w))
    np.add.at(hist, (rows, cols, lo), mag * (1.0 - frac))
    np.add.at(hist, (rows, cols, (lo + 1) % nbins), mag * frac)
    block_hist = hist.reshape(h // 8, 8, w // 8, 8, nbins).sum(axis=(1, 3))
    dc = np.ones(block_hist.shape[:2] + (1,))
    return np.concatenate([block_hist, dc], axis=-1)


def cell_center_pixels(height_cells: int, width_cells: int) -> np.ndarray:
    """(Hc, Wc, 2) array of (u, v) pixel centers of the 8x8 feature cells."""
    r, c = np.meshgrid(np.arange(height_cells), np.arange(width_cells), indexing="ij")
    u = 8.0 * c + 3.5
    v = 8.0 * r + 3.5
    return np.stack([u, v], axis=-1)


def pixel_to_cell_coords(uv: np.ndarray) -> np.ndarray:
    """Continuous pixel (u, v) -> feature-grid (col, row) coordinates."""
    return (np.asarray(uv, dtype=np.float64) - 3.5) / 8.0


def metadata_channels(key_cam: Camera, ref_cam: Camera, planes: DepthPlanes,
                      plane_index: int) -> np.ndarray:
    """Per-cell geometry channels for one depth plane: (6, H/8, W/8).

    Channels: keyframe ray direction in the keyframe camera frame (3), angle
    between the keyframe ray and the reference ray to the plane point (1),
    baseline length (1), plane depth (1).
    """
    h8, w8 = key_cam.height // 8, key_cam.width // 8
    depth = float(planes.values[plane_index])
    centers = cell_center_pixels(h8, w8).reshape(-1, 2)
    k = key_cam.intrinsics
    rays_cam = np.stack([(centers[:, 0] - k.cx) / k.fx,
                         (centers[:, 1] - k.cy) / k.fy,
                         np.ones(len(centers))], axis=-1)
    rays_cam /= np.linalg.norm(rays_cam, axis=-1, keepdims=True)

    pts_world = unproject_array(key_cam, centers, np.full(len(centers), depth))
    key_dir_world = (pts_world - key_cam.pose.translation)
    ref_dir_world = (pts_world - ref_cam.pose.translation)
    key_dir_world /= np.linalg.norm(key_dir_world, axis=-1, keepdims=True)
    norms = np.linalg.norm(ref_dir_world, axis=-1, keepdims=True)
    ref_dir_world = np.divide(ref_dir_world, norms, out=np.zeros_like(ref_dir_world),
                              where=norms > 0)
    cosang = np.clip((key_dir_world * ref_dir_world).sum(axis=-1), -1.0, 1.0)
    angle = np.arccos(cosang)

    baseline = float(np.linalg.norm(key_cam.pose.translation - ref_cam.pose.translation))
    out = np.empty((METADATA_CHANNELS, h8 * w8), dtype=np.float64)
    out[0:3] = rays_cam.T
    out[3] = angle
    out[4] = baseline
    out[5] = depth
    return out.reshape(METADATA_CHANNELS, h8, w8)


def reduce_channels(volume: np.ndarray, target: int, seed: int,
                    passthrough: int | None = None) -> np.ndarray:
    """Apply one seeded row-orthonormal map across all planes and pixels.

    volume: (planes, C_in, H, W) -> (planes, target, H, W).
    """
    planes, c_in = volume.shape[:2]
    if target > c_in:
        raise ValueError(f"cannot expand {c_in} channels to {target}")
    m = seeded_orthonormal_map(target, c_in, seed, passthrough=passthrough).astype(np.float32)
    return np.einsum("oc,dchw->dohw", m, volume.astype(np.float32, copy=False))
