"""Global voxel-grid fusion of per-keyframe cost volumes.

Each voxel center is projected into a keyframe, converted to a fractional
(plane, row, col) coordinate inside that keyframe's compensated cost volume
(plane position by inverse log-depth spacing), and trilinearly interpolated.
Samples from all keyframes are averaged in keyframe order, so the result is
independent of scheduling.

The back-projection baseline fills the same grid with the keyframe's 2D
feature at the voxel's projected pixel, identical along each camera ray;
it exists as the ablation reference, not as a recommended path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, DepthPlanes, project_array
from .costvol import sample_bilinear
from .encoder import FeatureMap, pixel_to_cell_coords
from .rccv import Rccv


@dataclass
class VoxelGrid:
    """Axis-aligned grid; origin is the center of voxel (0, 0, 0)."""

    origin: np.ndarray  # (3,) world meters
    voxel_size: float
    dims: tuple[int, int, int]
    channels: int
    data: np.ndarray  # (channels, nx, ny, nz) float32
    weight: np.ndarray  # (nx, ny, nz) float32
    observed: np.ndarray  # (nx, ny, nz) bool

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.data.shape != (self.channels, *self.dims):
            raise ValueError(f"data shape {self.data.shape} != ({self.channels}, *{self.dims})")

    def voxel_centers(self) -> np.ndarray:
        """(N, 3) world centers of all voxels, x-major raster order."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin + idx * self.voxel_size

    def world_to_grid(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.origin) / self.voxel_size

    def grid_to_world(self, idx: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(idx, dtype=np.float64) * self.voxel_size


def make_grid(origin, dims, voxel_size: float, channels: int,
              fill: float = 0.0) -> VoxelGrid:
    dims = tuple(int(d) for d in dims)
    return VoxelGrid(
        origin=np.asarray(origin, dtype=np.float64),
        voxel_size=float(voxel_size),
        dims=dims,
        channels=int(channels),
        data=np.full((channels, *dims), fill, dtype=np.float32),
        weight=np.zeros(dims, dtype=np.float32),
        observed=np.zeros(dims, dtype=bool),
    )


def grid_from_bounds(lo, hi, voxel_size: float, channels: int,
                     pad_voxels: int = 4, fill: float = 0.0) -> VoxelGrid:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError(f"empty bounds {lo} .. {hi}")
    origin = lo - pad_voxels * voxel_size
    dims = np.ceil((hi - origin) / voxel_size).astype(int) + pad_voxels + 1
    return make_grid(origin, tuple(dims), voxel_size, channels, fill)


def frustum_bounds(cams: list[Camera], d_min: float, d_max: float
                   ) -> tuple[np.ndarray, np.ndarray]:
    """AABB of the union of camera frusta clipped to [d_min, d_max]."""
    from .camera import unproject_array

    pts = []
    for cam in cams:
        w, h = cam.width, cam.height
        corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
        for d in (d_min, d_max):
            pts.append(unproject_array(cam, corners, np.full(4, d)))
    allpts = np.concatenate(pts, axis=0)
    return allpts.min(axis=0), allpts.max(axis=0)


def points_bounds(points: np.ndarray, pad_m: float = 0.0
                  ) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("no points to bound")
    return points.min(axis=0) - pad_m, points.max(axis=0) + pad_m


# -- sampling ---------------------------------------------------------------

def sample_rccv_array(rccv: Rccv, cam: Camera, planes: DepthPlanes,
                      points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear samples of a keyframe volume at world points (N, 3).

    Returns (values (N, C), valid (N,)).  A point is invalid when it falls
    behind the camera, outside the image, outside [d_min, d_max], or when any
    of its eight interpolation nodes is masked invalid in the cost volume.
    """
    uv, z, in_front = project_array(cam, points)
    with np.errstate(invalid="ignore"):
        cell = pixel_to_cell_coords(uv)
        pc = planes.plane_coordinate(np.where(z > 0, z, 1.0))

    d, c, h, w = rccv.data.shape
    col = cell[..., 0]
    row = cell[..., 1]
    valid = (in_front
             & (pc >= 0) & (pc <= d - 1)
             & (row >= 0) & (row <= h - 1)
             & (col >= 0) & (col <= w - 1))

    pcc = np.clip(np.where(valid, pc, 0.0), 0, d - 1)
    rowc = np.clip(np.where(valid, row, 0.0), 0, h - 1)
    colc = np.clip(np.where(valid, col, 0.0), 0, w - 1)

    p0 = np.minimum(np.floor(pcc).astype(np.int64), max(d - 2, 0))
    r0 = np.minimum(np.floor(rowc).astype(np.int64), max(h - 2, 0))
    c0 = np.minimum(np.floor(colc).astype(np.int64), max(w - 2, 0))
    fp = (pcc - p0).astype(np.float32)
    fr = (rowc - r0).astype(np.float32)
    fc = (colc - c0).astype(np.float32)
    p1 = np.minimum(p0 + 1, d - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)

    data = np.moveaxis(rccv.data, 1, -1)  # (d, h, w, c) for contiguous gathers
    mask = rccv.valid_mask
    vals = np.zeros((len(pcc), c), dtype=np.float32)
    supported = np.ones(len(pcc), dtype=bool)
    for pi, wp in ((p0, (1 - fp)), (p1, fp)):
        for ri, wr in ((r0, (1 - fr)), (r1, fr)):
            for ci, wcol in ((c0, (1 - fc)), (c1, fc)):
                vals += (wp * wr * wcol)[:, None] * data[pi, ri, ci]
                supported &= mask[pi, ri, ci]

    valid = valid & supported
    vals[~valid] = 0.0
    return vals, valid


def sample_rccv(rccv: Rccv, cam: Camera, planes: DepthPlanes,
                voxel_center) -> np.ndarray | None:
    """Single-point convenience wrapper; None encodes every miss."""
    pts = np.asarray(voxel_center, dtype=np.float64).reshape(1, 3)
    vals, valid = sample_rccv_array(rccv, cam, planes, pts)
    return vals[0] if valid[0] else None


def fuse(items: list[tuple[Rccv, Camera]], planes: DepthPlanes,
         grid: VoxelGrid) -> VoxelGrid:
    """Average per-keyframe samples into the grid (fixed keyframe order)."""
    if not items:
        raise ValueError("no keyframes to fuse")
    centers = grid.voxel_centers()
    csum = np.zeros((len(centers), grid.channels), dtype=np.float64)
    count = np.zeros(len(centers), dtype=np.float64)
    for rccv, cam in items:
        if rccv.channels != grid.channels:
            raise ValueError("rccv channels do not match the grid")
        vals, valid = sample_rccv_array(rccv, cam, planes, centers)
        csum += vals
        count += valid
    nz = count > 0
    mean = np.zeros_like(csum, dtype=np.float32)
    mean[nz] = (csum[nz] / count[nz, None]).astype(np.float32)
    grid.data[...] = mean.T.reshape(grid.channels, *grid.dims)
    grid.weight[...] = count.reshape(grid.dims).astype(np.float32)
    grid.observed[...] = grid.weight > 0
    return grid


def backproject_baseline(items: list[tuple[FeatureMap, Camera]],
                         grid: VoxelGrid) -> VoxelGrid:
    """Duplicate each keyframe's 2D features along entire camera rays."""
    if not items:
        raise ValueError("no keyframes to back-project")
    centers = grid.voxel_centers()
    csum = np.zeros((len(centers), grid.channels), dtype=np.float64)
    count = np.zeros(len(centers), dtype=np.float64)
    for feat, cam in items:
        if feat.channels != grid.channels:
            raise ValueError("feature channels do not match the grid")
        uv, z, in_front = project_array(cam, centers)
        with np.errstate(invalid="ignore"):
            cell = pixel_to_cell_coords(uv)
        vals, in_bounds = sample_bilinear(
            feat.data,
            np.where(in_front, cell[..., 1], -1.0),
            np.where(in_front, cell[..., 0], -1.0),
        )
        valid = in_front & in_bounds
        vals[~valid] = 0.0
        csum += vals
        count += valid
    nz = count > 0
    mean = np.zeros_like(csum, dtype=np.float32)
    mean[nz] = (csum[nz] / count[nz, None]).astype(np.float32)
    grid.data[...] = mean.T.reshape(grid.channels, *grid.dims)
    grid.weight[...] = count.reshape(grid.dims).astype(np.float32)
    grid.observed[...] = grid.weight > 0
    return grid
