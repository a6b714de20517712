"""Triangle meshes: marching-cubes extraction, PLY/OBJ export, area-weighted

point sampling, and mesh-to-depth rendering.

Marching cubes uses the standard 256-case tables with vertices welded by
grid-edge key, so shared cube edges produce shared mesh vertices and closed
isosurfaces come out watertight.  Cells touching an unobserved voxel are
skipped.  Depth rendering is exact ray-triangle intersection with a per-pixel
z-buffer; ties (shared edges) deterministically keep the lowest triangle
index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .camera import Camera
from .tsdf import DepthMap, TsdfVolume

# lower grid corner and axis of each cube edge, derived from EDGE_CORNERS
_EDGE_BASE = []
_EDGE_AXIS = []
for _a, _b in EDGE_CORNERS:
    oa = np.array(CORNER_OFFSETS[_a])
    ob = np.array(CORNER_OFFSETS[_b])
    _EDGE_BASE.append(np.minimum(oa, ob))
    _EDGE_AXIS.append(int(np.nonzero(oa != ob)[0][0]))


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (N, 3) float64 world meters
    triangles: np.ndarray  # (M, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(v) and not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertices")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def merge_meshes(meshes: list[TriMesh]) -> TriMesh:
    """Concatenate meshes; vertex index ranges stay disjoint per input."""
    if not meshes:
        return empty_mesh()
    verts, tris, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        base += m.num_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


def marching_cubes(vol: TsdfVolume, iso: float = 0.0) -> TriMesh:
    """Extract the iso-surface; cells with any unobserved corner are skipped."""
    values = vol.grid.data[0]
    observed = vol.grid.observed
    nx, ny, nz = values.shape
    if min(nx, ny, nz) < 2:
        raise ValueError("volume must be at least 2 voxels per axis")

    inside = values < iso
    # case index per cell from the 8 shifted corner views
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    all_observed = np.ones((nx - 1, ny - 1, nz - 1), dtype=bool)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        corner_in = inside[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz]
        case |= corner_in.astype(np.uint16) << bit
        all_observed &= observed[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz]
    active = all_observed & (case != 0) & (case != 255)
    cells = np.argwhere(active)

    verts: list[np.ndarray] = []
    vert_ids: dict[tuple[int, int, int, int], int] = {}
    tris: list[tuple[int, int, int]] = []
    origin = vol.grid.origin
    h = vol.grid.voxel_size

    for ci, cj, ck in cells:
        case_idx = int(case[ci, cj, ck])
        edge_bits = EDGE_TABLE[case_idx]
        edge_vert = [-1] * 12
        for e in range(12):
            if not (edge_bits >> e) & 1:
                continue
            base = _EDGE_BASE[e]
            axis = _EDGE_AXIS[e]
            key = (ci + int(base[0]), cj + int(base[1]), ck + int(base[2]), axis)
            vid = vert_ids.get(key)
            if vid is None:
                ca, cb = EDGE_CORNERS[e]
                oa, ob = CORNER_OFFSETS[ca], CORNER_OFFSETS[cb]
                va = float(values[ci + oa[0], cj + oa[1], ck + oa[2]])
                vb = float(values[ci + ob[0], cj + ob[1], ck + ob[2]])
                denom = vb - va
                t = 0.5 if abs(denom) < 1e-12 else (iso - va) / denom
                pa = origin + np.array([ci + oa[0], cj + oa[1], ck + oa[2]]) * h
                pb = origin + np.array([ci + ob[0], cj + ob[1], ck + ob[2]]) * h
                vid = len(verts)
                verts.append(pa + t * (pb - pa))
                vert_ids[key] = vid
            edge_vert[e] = vid
        tri = TRI_TABLE[case_idx]
        for k in range(0, len(tri), 3):
            tris.append((edge_vert[tri[k]], edge_vert[tri[k + 1]], edge_vert[tri[k + 2]]))

    if not tris:
        return empty_mesh()
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int64))


def edge_use_counts(mesh: TriMesh) -> dict[tuple[int, int], int]:
    """How many triangles use each undirected edge (2 everywhere = watertight)."""
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_watertight(mesh: TriMesh) -> bool:
    if mesh.num_triangles == 0:
        return False
    return all(n == 2 for n in edge_use_counts(mesh).values())


def sample_points(mesh: TriMesh, density: float, seed: int = 0) -> np.ndarray:
    """Deterministic area-weighted surface samples, about density pts/m^2.

    The total count is round(area * density), apportioned to triangles by
    largest remainder, so exact area ratios give exact count ratios.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    areas = mesh.triangle_areas()
    total_area = float(areas.sum())
    if total_area <= 0:
        raise ValueError("mesh has zero surface area")
    total = int(round(total_area * density))
    quota = areas * density
    counts = np.floor(quota).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = quota - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:short]] += 1
    elif short < 0:
        frac = quota - counts
        order = np.lexsort((np.arange(len(frac)), frac))
        take = 0
        for idx in order:
            if take == -short:
                break
            if counts[idx] > 0:
                counts[idx] -= 1
                take += 1

    rng = np.random.default_rng(seed)
    out = []
    for ti in np.nonzero(counts)[0]:
        n = int(counts[ti])
        a, b, c = mesh.vertices[mesh.triangles[ti]]
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        out.append(pts)
    return np.concatenate(out, axis=0) if out else np.zeros((0, 3))


def render_depth(mesh: TriMesh, cam: Camera) -> DepthMap:
    """Per-pixel nearest ray-triangle intersection depth; 0 where no hit."""
    h, w = cam.height, cam.width
    zbuf = np.full((h, w), np.inf)
    if mesh.num_triangles:
        k = cam.intrinsics
        pose_inv = cam.pose.inverse()
        cam_verts = pose_inv.transform(mesh.vertices)
        for tri in mesh.triangles:
            _raster_triangle(cam_verts[tri], k, zbuf)
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return DepthMap(values=depth.astype(np.float32), camera=cam)


def _raster_triangle(v: np.ndarray, k, zbuf: np.ndarray) -> None:
    """Z-buffer one camera-frame triangle with exact ray intersections."""
    if np.any(v[:, 2] <= 1e-9):
        return  # triangles reaching behind the camera are not rendered
    h, w = zbuf.shape
    us = k.fx * v[:, 0] / v[:, 2] + k.cx
    vs = k.fy * v[:, 1] / v[:, 2] + k.cy
    u0 = max(int(np.ceil(us.min() - 1e-9)), 0)
    u1 = min(int(np.floor(us.max() + 1e-9)), w - 1)
    v0 = max(int(np.ceil(vs.min() - 1e-9)), 0)
    v1 = min(int(np.floor(vs.max() + 1e-9)), h - 1)
    if u0 > u1 or v0 > v1:
        return
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    # rays through pixel centers, z component 1: depth equals the ray parameter
    dirs = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu, float)],
                    axis=-1).reshape(-1, 3)

    e1 = v[1] - v[0]
    e2 = v[2] - v[0]
    pvec = np.cross(dirs, e2)
    det = pvec @ e1
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = -v[0]
    bu = (pvec @ tvec) * inv
    qvec = np.cross(tvec, e1)
    bv = (dirs * qvec).sum(axis=1) * inv
    t = (e2 @ qvec) * inv
    hit = ok & (bu >= -1e-12) & (bv >= -1e-12) & (bu + bv <= 1 + 1e-12) & (t > 1e-9)
    if not hit.any():
        return
    sub = zbuf[v0:v1 + 1, u0:u1 + 1].reshape(-1)
    better = hit & (t < sub)
    sub[better] = t[better]
    zbuf[v0:v1 + 1, u0:u1 + 1] = sub.reshape(v1 - v0 + 1, u1 - u0 + 1)


# -- PLY / OBJ --------------------------------------------------------------

def save_ply(path, mesh: TriMesh, binary: bool = True) -> None:
    """Positions-only PLY, binary little-endian or ASCII."""
    path = Path(path)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {mesh.num_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.num_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    if binary:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(mesh.vertices.astype("<f4").tobytes())
            if mesh.num_triangles:
                counts = np.full((mesh.num_triangles, 1), 3, dtype=np.uint8)
                body = b"".join(
                    counts[i].tobytes() + mesh.triangles[i].astype("<i4").tobytes()
                    for i in range(mesh.num_triangles)
                )
                f.write(body)
    else:
        with open(path, "w") as f:
            f.write(header)
            for x, y, z in mesh.vertices:
                f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
            for a, b, c in mesh.triangles:
                f.write(f"3 {a} {b} {c}\n")


def load_ply(path) -> TriMesh:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path} is not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    fmt = None
    counts = {}
    order = []
    props: dict[str, list[str]] = {}
    current = None
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            current = parts[1]
            counts[current] = int(parts[2])
            order.append(current)
            props[current] = []
        elif parts[0] == "property" and current is not None:
            props[current].append(line)
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")
    nv = counts.get("vertex", 0)
    nf = counts.get("face", 0)
    vprops = props.get("vertex", [])
    double = any("double" in p for p in vprops)

    if fmt == "ascii":
        tokens = body.decode("ascii").split("\n")
        vals = [t.split() for t in tokens if t.strip()]
        verts = np.array([[float(x) for x in row[:3]] for row in vals[:nv]])
        tris = np.array([[int(x) for x in row[1:4]] for row in vals[nv:nv + nf]],
                        dtype=np.int64) if nf else np.zeros((0, 3), np.int64)
        return TriMesh(verts.reshape(-1, 3), tris)

    vsize = 8 if double else 4
    per_vertex = len(vprops)
    vbytes = nv * per_vertex * vsize
    varr = np.frombuffer(body[:vbytes], dtype="<f8" if double else "<f4")
    verts = varr.reshape(nv, per_vertex)[:, :3].astype(np.float64)
    tris = np.zeros((nf, 3), dtype=np.int64)
    off = vbytes
    for i in range(nf):
        (cnt,) = struct.unpack_from("<B", body, off)
        off += 1
        if cnt != 3:
            raise ValueError("only triangle faces are supported")
        tris[i] = struct.unpack_from("<3i", body, off)
        off += 12
    return TriMesh(verts, tris)


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")
