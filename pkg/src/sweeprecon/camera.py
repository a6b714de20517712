"""Pinhole camera model, rigid poses, projection, and depth-hypothesis planes.

Conventions used everywhere in this package:

- Pixel coordinates are (u, v) with u = column, v = row, and pixel centers
  at integer coordinates.
- Poses are world-from-camera: ``X_world = R @ X_cam + t``.  On disk a pose
  is 16 whitespace-separated floats, row-major 4x4, same convention.
- Depth means camera-frame z, not ray length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCameraError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def scaled(self, scale: float) -> "Intrinsics":
        """Intrinsics of the image downsampled by block-averaging 1/scale pixels.

        Output pixel r covers input pixels [r/scale, (r+1)/scale); its center
        sits at input coordinate r/scale + (1/scale - 1)/2, hence the shift.
        """
        inv = 1.0 / scale
        off = (inv - 1.0) / 2.0
        return Intrinsics(
            fx=self.fx * scale,
            fy=self.fy * scale,
            cx=(self.cx - off) * scale,
            cy=(self.cy - off) * scale,
            width=int(round(self.width * scale)),
            height=int(round(self.height * scale)),
        )


@dataclass(frozen=True)
class Pose:
    """World-from-camera rigid transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "Pose":
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {mat.shape}")
        return Pose(mat[:3, :3], mat[:3, 3])

    def matrix(self) -> np.ndarray:
        mat = np.eye(4, dtype=np.float64)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self @ other as transforms (apply other first)."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def rotation_angle_deg(a: Pose, b: Pose) -> float:
    """Geodesic angle between two pose rotations, in degrees."""
    rel = a.rotation.T @ b.rotation
    c = (np.trace(rel) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def scaled(self, scale: float) -> "Camera":
        return Camera(self.intrinsics.scaled(scale), self.pose)


def unproject(cam: Camera, pixel, depth: float) -> np.ndarray:
    """Lift a pixel at the given camera-frame depth to a world point."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    k = cam.intrinsics
    p_cam = np.array(
        [depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth], dtype=np.float64
    )
    return cam.pose.rotation @ p_cam + cam.pose.translation


def project(cam: Camera, world_point) -> tuple[tuple[float, float], float]:
    """Project a world point; returns ((u, v), depth). Raises behind the camera."""
    p = np.asarray(world_point, dtype=np.float64).reshape(3)
    p_cam = cam.pose.rotation.T @ (p - cam.pose.translation)
    z = p_cam[2]
    if z <= 0:
        raise BehindCameraError(f"point has camera-frame z = {z}")
    k = cam.intrinsics
    u = k.fx * p_cam[0] / z + k.cx
    v = k.fy * p_cam[1] / z + k.cy
    return (float(u), float(v)), float(z)


def unproject_array(cam: Camera, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Vectorized unproject: pixels (N, 2), depths (N,) -> world points (N, 3)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    k = cam.intrinsics
    x = depths * (pixels[..., 0] - k.cx) / k.fx
    y = depths * (pixels[..., 1] - k.cy) / k.fy
    p_cam = np.stack([x, y, depths], axis=-1)
    return p_cam @ cam.pose.rotation.T + cam.pose.translation


def project_array(cam: Camera, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized project: points (N, 3) -> (uv (N, 2), depth (N,), valid (N,)).

    valid is False where camera-frame z <= 0; uv/depth are unusable there.
    """
    pts = np.asarray(pts, dtype=np.float64)
    p_cam = (pts - cam.pose.translation) @ cam.pose.rotation
    z = p_cam[..., 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        k = cam.intrinsics
        u = k.fx * p_cam[..., 0] / z + k.cx
        v = k.fy * p_cam[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1), z, valid


@dataclass(frozen=True)
class DepthPlanes:
    """Depth hypotheses, geometrically spaced, endpoints inclusive."""

    d_min: float
    d_max: float
    count: int
    values: np.ndarray = field(compare=False)

    @property
    def log_span(self) -> float:
        return math.log(self.d_max / self.d_min)

    def plane_coordinate(self, depth) -> np.ndarray:
        """Fractional plane index of a depth; exact inverse of make_log_planes.

        plane i sits at coordinate i (0-based); depths off the progression map
        to fractional coordinates by log interpolation.
        """
        depth = np.asarray(depth, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.count - 1) * (np.log(depth) - math.log(self.d_min)) / self.log_span

    def depth_at(self, coord) -> np.ndarray:
        """Depth at a fractional plane coordinate (inverse of plane_coordinate)."""
        coord = np.asarray(coord, dtype=np.float64)
        return self.d_min * np.exp(coord * self.log_span / (self.count - 1))


def make_log_planes(d_min: float, d_max: float, count: int) -> DepthPlanes:
    """Depth planes d_min * (d_max/d_min)^(i/(count-1)), i = 0..count-1."""
    if d_min <= 0 or d_min >= d_max:
        raise ValueError(f"need 0 < d_min < d_max, got [{d_min}, {d_max}]")
    if count < 2:
        raise ValueError(f"need at least 2 planes, got {count}")
    i = np.arange(count, dtype=np.float64)
    values = d_min * (d_max / d_min) ** (i / (count - 1))
    values[0] = d_min
    values[-1] = d_max
    return DepthPlanes(d_min=float(d_min), d_max=float(d_max), count=int(count), values=values)


# -- plain-text camera files ------------------------------------------------

def save_pose(path, pose: Pose) -> None:
    mat = pose.matrix()
    Path(path).write_text(
        "\n".join(" ".join(f"{x:.17g}" for x in row) for row in mat) + "\n"
    )


def load_pose_matrix(path) -> np.ndarray:
    """Raw 4x4 from a 16-float pose file; no finiteness or orthonormality check."""
    tokens = Path(path).read_text().split()
    if len(tokens) != 16:
        raise ValueError(f"pose file {path} has {len(tokens)} values, expected 16")
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ValueError(f"pose file {path} has a non-numeric entry") from exc
    return np.array(vals, dtype=np.float64).reshape(4, 4)


def load_pose(path) -> Pose:
    return Pose.from_matrix(load_pose_matrix(path))


def save_intrinsics(path, k: Intrinsics) -> None:
    Path(path).write_text(
        f"{k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g} {k.width} {k.height}\n"
    )


def load_intrinsics(path) -> Intrinsics:
    tokens = Path(path).read_text().split()
    if len(tokens) != 6:
        raise ValueError(f"intrinsics file {path} has {len(tokens)} values, expected 6")
    fx, fy, cx, cy = (float(t) for t in tokens[:4])
    width, height = int(float(tokens[4])), int(float(tokens[5]))
    return Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
