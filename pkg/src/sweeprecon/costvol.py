"""Plane-sweep cost volumes: warp reference features onto depth planes of a

keyframe and score the match with per-cell descriptor dot products.

Channel layout per plane (``agg`` mode):

- ``meanvar``: [dot mean, dot variance | 6 metadata] over the valid references
- ``concat``:  [dot ref 1 .. dot ref K | 6 metadata]

The first channel is the matching-confidence channel in both modes (for
``concat`` it is the first reference's dot product).  Cells no reference
covers are zero in every channel and False in the validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, DepthPlanes, project_array, unproject_array
from .dataset import KeyframeBundle
from .encoder import (METADATA_CHANNELS, FeatureMap, cell_center_pixels,
                      metadata_channels, pixel_to_cell_coords)

CONFIDENCE_CHANNEL = 0


@dataclass(frozen=True)
class CostVolume:
    planes: int
    channels: int
    height: int
    width: int
    data: np.ndarray  # (planes, channels, height, width) float32
    valid_mask: np.ndarray  # (planes, height, width) bool
    depth_planes: DepthPlanes

    def __post_init__(self):
        expect = (self.planes, self.channels, self.height, self.width)
        if self.data.shape != expect:
            raise ValueError(f"cost volume data shape {self.data.shape} != {expect}")
        if self.valid_mask.shape != (self.planes, self.height, self.width):
            raise ValueError("valid_mask shape does not match data")


def sample_bilinear(data: np.ndarray, rows: np.ndarray, cols: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sample of (C, H, W) data at continuous (row, col) positions.

    Returns (values (..., C), valid (...)). Positions outside the node
    rectangle [0, H-1] x [0, W-1] are invalid and come back as zeros.
    """
    c, h, w = data.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    valid = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.clip(rows, 0, h - 1)
    cc = np.clip(cols, 0, w - 1)
    r0 = np.minimum(np.floor(r).astype(np.int64), h - 2) if h > 1 else np.zeros_like(r, np.int64)
    c0 = np.minimum(np.floor(cc).astype(np.int64), w - 2) if w > 1 else np.zeros_like(cc, np.int64)
    fr = (r - r0).astype(np.float32)
    fc = (cc - c0).astype(np.float32)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)

    v00 = data[:, r0, c0]
    v01 = data[:, r0, c1]
    v10 = data[:, r1, c0]
    v11 = data[:, r1, c1]
    out = ((1 - fr) * (1 - fc) * v00 + (1 - fr) * fc * v01
           + fr * (1 - fc) * v10 + fr * fc * v11)
    out = np.moveaxis(out, 0, -1)
    out[~valid] = 0.0
    return out.astype(np.float32), valid


def sample_nearest(data: np.ndarray, rows: np.ndarray, cols: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor variant of sample_bilinear (oracle-friendly)."""
    c, h, w = data.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    valid = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.clip(np.round(rows), 0, h - 1).astype(np.int64)
    cc = np.clip(np.round(cols), 0, w - 1).astype(np.int64)
    out = np.moveaxis(data[:, r, cc], 0, -1).copy()
    out[~valid] = 0.0
    return out.astype(np.float32), valid


def warp_to_plane(ref_feat: FeatureMap, ref_cam: Camera, key_cam: Camera,
                  depth: float, interp: str = "bilinear",
                  renormalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Resample a reference feature map onto one keyframe depth plane.

    Each keyframe cell center is unprojected at ``depth``, projected into the
    reference camera, and the reference features are sampled there.  Returns
    (warped (C, Hc, Wc) float32, coverage (Hc, Wc) bool); cells that fall
    outside the reference image or behind its camera are zero and uncovered.

    Interpolating between unit-norm descriptors shrinks the result's norm at
    off-node positions, which would bias matching toward cell-aligned
    disparities; ``renormalize`` restores unit norm so dot products stay
    calibrated cosines (node samples are untouched up to float rounding).
    """
    hc, wc = key_cam.height // 8, key_cam.width // 8
    if (ref_feat.height, ref_feat.width) != (ref_cam.height // 8, ref_cam.width // 8):
        raise ValueError("reference feature map does not match reference camera dims")
    centers = cell_center_pixels(hc, wc).reshape(-1, 2)
    world = unproject_array(key_cam, centers, np.full(len(centers), float(depth)))
    uv, z, in_front = project_array(ref_cam, world)
    cell = pixel_to_cell_coords(uv)
    sampler = sample_bilinear if interp == "bilinear" else sample_nearest
    vals, in_bounds = sampler(ref_feat.data, cell[:, 1], cell[:, 0])
    coverage = in_front & in_bounds
    vals[~coverage] = 0.0
    if renormalize:
        norms = np.linalg.norm(vals, axis=-1, keepdims=True)
        vals = np.divide(vals, norms, out=vals, where=norms > 1e-12)
    warped = np.moveaxis(vals.reshape(hc, wc, -1), -1, 0)
    return np.ascontiguousarray(warped), coverage.reshape(hc, wc)


def build_cost_volume(bundle: KeyframeBundle, feats: dict[int, FeatureMap],
                      planes: DepthPlanes, agg: str = "meanvar",
                      include_metadata: bool = True,
                      interp: str = "bilinear") -> CostVolume:
    """Sweep all planes, dot the warped reference features against the

    keyframe features, and stack per-plane channels (see module docstring).
    """
    if not bundle.references:
        raise ValueError("bundle has no reference frames")
    if agg not in ("meanvar", "concat"):
        raise ValueError(f"unknown aggregation {agg!r}")
    key = bundle.keyframe
    key_feat = feats[key.index]
    nrefs = len(bundle.references)
    hc, wc = key_feat.height, key_feat.width
    dot_channels = 2 if agg == "meanvar" else nrefs
    channels = dot_channels + (METADATA_CHANNELS if include_metadata else 0)

    data = np.zeros((planes.count, channels, hc, wc), dtype=np.float32)
    valid = np.zeros((planes.count, hc, wc), dtype=bool)

    for pi in range(planes.count):
        depth = float(planes.values[pi])
        dots = np.zeros((nrefs, hc, wc), dtype=np.float32)
        cover = np.zeros((nrefs, hc, wc), dtype=bool)
        for ri, ref in enumerate(bundle.references):
            warped, cov = warp_to_plane(feats[ref.index], ref.camera, key.camera,
                                        depth, interp=interp)
            dots[ri] = (key_feat.data * warped).sum(axis=0)
            cover[ri] = cov
        any_cover = cover.any(axis=0)
        valid[pi] = any_cover

        if agg == "meanvar":
            count = np.maximum(cover.sum(axis=0), 1)
            mean = np.where(cover, dots, 0.0).sum(axis=0) / count
            var = (np.where(cover, (dots - mean) ** 2, 0.0)).sum(axis=0) / count
            data[pi, 0] = mean
            data[pi, 1] = var
        else:
            data[pi, :nrefs] = np.where(cover, dots, 0.0)

        if include_metadata:
            meta = np.zeros((METADATA_CHANNELS, hc, wc), dtype=np.float64)
            for ref in bundle.references:
                meta += metadata_channels(key.camera, ref.camera, planes, pi)
            data[pi, dot_channels:] = (meta / nrefs).astype(np.float32)

        data[pi, :, ~any_cover] = 0.0

    return CostVolume(planes=planes.count, channels=channels, height=hc, width=wc,
                      data=data, valid_mask=valid, depth_planes=planes)
