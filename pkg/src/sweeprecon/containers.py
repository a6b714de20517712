"""Binary file containers: weight matrices, compensation weight bundles,

cost-volume dumps, and voxel-grid dumps.  All integers and floats are
little-endian; array payloads are row-major float32 unless noted.

Formats:

- weight matrix:  16-byte header (magic ``SWRM``, uint32 rows, uint32 cols,
  4 reserved bytes) + rows*cols float32.
- weight sections: header (magic ``SWRS``, uint32 count, 8 reserved bytes),
  then a table of ``count`` records (16-byte NUL-padded name, uint32 ndim,
  4 uint32 dims with unused dims = 1), then the float32 payloads
  concatenated in table order.
- cost volume: magic ``SWCV`` + uint32 planes, channels, height, width,
  then ``planes`` float64 plane depths, float32 data, uint8 validity mask.
- voxel grid: magic ``SWVG`` + uint32 nx, ny, nz, channels + float64
  voxel_size + 3x float64 origin + float64 aux (truncation distance for TSDF
  volumes, 0 otherwise) + float32 data + float32 weight + uint8 observed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .camera import DepthPlanes
from .costvol import CostVolume
from .fusion import VoxelGrid, make_grid
from .rccv import CompensationWeights
from .tsdf import TsdfVolume

MAGIC_MATRIX = b"SWRM"
MAGIC_SECTIONS = b"SWRS"
MAGIC_COSTVOL = b"SWCV"
MAGIC_GRID = b"SWVG"


def save_weight_matrix(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError("weight matrix must be 2D")
    with open(path, "wb") as f:
        f.write(MAGIC_MATRIX)
        f.write(struct.pack("<II4x", m.shape[0], m.shape[1]))
        f.write(m.astype("<f4").tobytes())


def load_weight_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC_MATRIX:
        raise ValueError(f"{path} is not a weight matrix file")
    rows, cols = struct.unpack_from("<II", raw, 4)
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=16)
    return data.reshape(rows, cols).copy()


def _write_sections(path, sections: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC_SECTIONS)
        f.write(struct.pack("<I8x", len(sections)))
        for name, arr in sections:
            if arr.ndim > 4:
                raise ValueError(f"section {name} has more than 4 dims")
            dims = list(arr.shape) + [1] * (4 - arr.ndim)
            f.write(struct.pack("<16sI4I", name.encode("ascii"), arr.ndim, *dims))
        for _, arr in sections:
            f.write(np.asarray(arr, dtype="<f4").tobytes())


def _read_sections(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC_SECTIONS:
        raise ValueError(f"{path} is not a weight sections file")
    (count,) = struct.unpack_from("<I", raw, 4)
    off = 16
    table = []
    for _ in range(count):
        name_raw, ndim, d0, d1, d2, d3 = struct.unpack_from("<16sI4I", raw, off)
        off += 36
        table.append((name_raw.rstrip(b"\0").decode("ascii"),
                      (d0, d1, d2, d3)[:ndim]))
    out = {}
    for name, shape in table:
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).copy()
        off += 4 * n
        out[name] = arr.reshape(shape)
    return out


def save_compensation_weights(path, w: CompensationWeights) -> None:
    sections = [
        ("ray_kernel", w.ray_kernel),
        ("ray_bias", w.ray_bias),
        ("plane_kernels", w.plane_kernels),
        ("plane_bias", w.plane_bias),
        ("shared_kernel", w.shared_kernel),
        ("shared_bias", w.shared_bias),
    ]
    if w.uni_kernel is not None:
        sections.append(("uni_kernel", w.uni_kernel))
        sections.append(("uni_bias", w.uni_bias))
    _write_sections(path, sections)


def load_compensation_weights(path) -> CompensationWeights:
    sec = _read_sections(path)
    return CompensationWeights(
        ray_kernel=sec["ray_kernel"],
        ray_bias=sec["ray_bias"].reshape(-1),
        plane_kernels=sec["plane_kernels"],
        plane_bias=sec["plane_bias"],
        shared_kernel=sec["shared_kernel"],
        shared_bias=sec["shared_bias"].reshape(-1),
        uni_kernel=sec.get("uni_kernel"),
        uni_bias=sec.get("uni_bias", None),
    )


def save_cost_volume(path, cv: CostVolume) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC_COSTVOL)
        f.write(struct.pack("<4I", cv.planes, cv.channels, cv.height, cv.width))
        f.write(np.asarray(cv.depth_planes.values, dtype="<f8").tobytes())
        f.write(np.asarray(cv.data, dtype="<f4").tobytes())
        f.write(np.asarray(cv.valid_mask, dtype=np.uint8).tobytes())


def load_cost_volume(path) -> CostVolume:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC_COSTVOL:
        raise ValueError(f"{path} is not a cost volume dump")
    d, c, h, w = struct.unpack_from("<4I", raw, 4)
    off = 4 + 16
    values = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    data = np.frombuffer(raw, dtype="<f4", count=d * c * h * w, offset=off).copy()
    off += 4 * d * c * h * w
    mask = np.frombuffer(raw, dtype=np.uint8, count=d * h * w, offset=off)
    planes = DepthPlanes(d_min=float(values[0]), d_max=float(values[-1]),
                         count=d, values=values)
    return CostVolume(planes=d, channels=c, height=h, width=w,
                      data=data.reshape(d, c, h, w),
                      valid_mask=mask.reshape(d, h, w).astype(bool),
                      depth_planes=planes)


def save_grid(path, grid: VoxelGrid, aux: float = 0.0) -> None:
    nx, ny, nz = grid.dims
    with open(path, "wb") as f:
        f.write(MAGIC_GRID)
        f.write(struct.pack("<4I", nx, ny, nz, grid.channels))
        f.write(struct.pack("<d", grid.voxel_size))
        f.write(struct.pack("<3d", *grid.origin))
        f.write(struct.pack("<d", aux))
        f.write(np.asarray(grid.data, dtype="<f4").tobytes())
        f.write(np.asarray(grid.weight, dtype="<f4").tobytes())
        f.write(np.asarray(grid.observed, dtype=np.uint8).tobytes())


def load_grid(path) -> tuple[VoxelGrid, float]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC_GRID:
        raise ValueError(f"{path} is not a voxel grid dump")
    nx, ny, nz, c = struct.unpack_from("<4I", raw, 4)
    voxel_size, ox, oy, oz, aux = struct.unpack_from("<5d", raw, 20)
    off = 20 + 40
    n = nx * ny * nz
    grid = make_grid((ox, oy, oz), (nx, ny, nz), voxel_size, c)
    grid.data[...] = np.frombuffer(raw, dtype="<f4", count=c * n,
                                   offset=off).reshape(c, nx, ny, nz)
    off += 4 * c * n
    grid.weight[...] = np.frombuffer(raw, dtype="<f4", count=n,
                                     offset=off).reshape(nx, ny, nz)
    off += 4 * n
    grid.observed[...] = np.frombuffer(raw, dtype=np.uint8, count=n,
                                       offset=off).reshape(nx, ny, nz).astype(bool)
    return grid, aux


def save_tsdf(path, vol: TsdfVolume) -> None:
    save_grid(path, vol.grid, aux=vol.trunc)


def load_tsdf(path) -> TsdfVolume:
    grid, aux = load_grid(path)
    if grid.channels != 1 or aux <= 0:
        raise ValueError(f"{path} does not hold a TSDF volume")
    return TsdfVolume(grid=grid, trunc=aux)
