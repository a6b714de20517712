"""Synthetic scenes: axis-aligned textured primitives, a deterministic

raycaster producing posed RGB + ground-truth depth, exact triangulations for
3D evaluation, and emission of the on-disk dataset layout.

Textures are procedural and smooth (a soft sine checker plus a small bank of
seeded sinusoids), so descriptor fields vary smoothly across image blocks and
matching has usable analytic structure; the contrast knob can be turned down
to induce the low-texture failure mode on purpose.  Rays are point sampled
(no anti-aliasing) so rendered depth is exact at every pixel.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera, Intrinsics, Pose, save_intrinsics, save_pose
from .dataset import write_depth_png
from .mesh import TriMesh, merge_meshes, save_ply
from .tsdf import DepthMap

AMBIENT = 0.3
CHECKER_ANISOTROPY = 1.31  # second checker period = scale * this
_NOISE_WAVES = 6
_NOISE_WAVELENGTH_SPAN = (0.6, 1.45)  # relative to the texture scale
_CHECKER_WEIGHT = 0.5  # checker/noise mix in checker+noise mode


@dataclass(frozen=True)
class Texture:
    kind: str = "checker+noise"  # flat | checker | noise | checker+noise
    scale: float = 0.4  # checker period in surface meters
    contrast: float = 0.8
    seed: int = 0
    base: float = 0.5

    def __post_init__(self):
        if self.kind not in ("flat", "checker", "noise", "checker+noise"):
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("texture scale must be positive")

    def albedo(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.kind == "flat" or self.contrast == 0:
            return np.full_like(np.asarray(u, dtype=np.float64), self.base)
        signal = np.zeros_like(np.asarray(u, dtype=np.float64))
        if self.kind in ("checker", "checker+noise"):
            su = np.sin(2.0 * np.pi * u / self.scale)
            sv = np.sin(2.0 * np.pi * v / (self.scale * CHECKER_ANISOTROPY))
            w = _CHECKER_WEIGHT if self.kind == "checker+noise" else 1.0
            signal += w * su * sv
        if self.kind in ("noise", "checker+noise"):
            rng = np.random.default_rng(self.seed)
            amp = rng.random(_NOISE_WAVES) + 0.5
            amp /= amp.sum()
            lam = self.scale * rng.uniform(*_NOISE_WAVELENGTH_SPAN, _NOISE_WAVES)
            theta = rng.uniform(0, 2 * np.pi, _NOISE_WAVES)
            phase = rng.uniform(0, 2 * np.pi, _NOISE_WAVES)
            n = np.zeros_like(signal)
            for a, l, th, ph in zip(amp, lam, theta, phase):
                n += a * np.sin(2.0 * np.pi * (u * math.cos(th) + v * math.sin(th)) / l + ph)
            w = 1.0 - _CHECKER_WEIGHT if self.kind == "checker+noise" else 1.0
            signal += w * n
        return np.clip(self.base + 0.5 * self.contrast * signal, 0.0, 1.0)


_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class PlanePrim:
    """Axis-aligned rectangle; normal along +/- one axis."""

    center: tuple[float, float, float]
    axis: int  # normal axis, 0..2
    sign: int  # +1 or -1, facing direction
    size: tuple[float, float]  # full extents along the two in-plane axes
    texture: Texture = field(default_factory=Texture)

    def inplane_axes(self) -> tuple[int, int]:
        return tuple(a for a in range(3) if a != self.axis)  # type: ignore[return-value]


@dataclass(frozen=True)
class BoxPrim:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # full extents
    texture: Texture = field(default_factory=Texture)


@dataclass(frozen=True)
class SceneSpec:
    camera: Intrinsics
    poses: tuple[Pose, ...]
    primitives: tuple

    def __post_init__(self):
        if not self.poses or not self.primitives:
            raise ValueError("a scene needs at least one pose and one primitive")


def orbit_trajectory(center, radius: float, frames: int, pitch_deg: float = 0.0,
                     look: str = "outward", yaw_offset_deg: float = 0.0,
                     sweep_deg: float = 360.0) -> tuple[Pose, ...]:
    """Cameras on a horizontal circle, evenly spaced, pitched up/down.

    ``look='outward'`` faces away from the center, ``'inward'`` toward it.
    World +z is up; camera convention is +z forward, +y down.
    """
    if look not in ("outward", "inward"):
        raise ValueError("look must be 'outward' or 'inward'")
    center = np.asarray(center, dtype=np.float64)
    poses = []
    pitch = math.radians(pitch_deg)
    for i in range(frames):
        theta = math.radians(yaw_offset_deg) + math.radians(sweep_deg) * i / frames
        radial = np.array([math.cos(theta), math.sin(theta), 0.0])
        position = center + radius * radial
        fwd = radial if look == "outward" else -radial
        forward = np.array([fwd[0] * math.cos(pitch), fwd[1] * math.cos(pitch),
                            math.sin(pitch)])
        poses.append(look_at_pose(position, forward))
    return tuple(poses)


def look_at_pose(position, forward, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-from-camera pose with +z along forward and +y pointing down."""
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    u = np.asarray(up, dtype=np.float64)
    x = np.cross(f, u)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("forward direction is parallel to up")
    x /= nx
    y = np.cross(f, x)
    rot = np.stack([x, y, f], axis=1)
    return Pose(rot, np.asarray(position, dtype=np.float64))


# -- ray casting --------------------------------------------------------------

def _ray_plane(origin, dirs, prim: PlanePrim):
    """t parameter per ray, inf where missed; plus hit uv in surface meters."""
    a = prim.axis
    u_ax, v_ax = prim.inplane_axes()
    denom = dirs[:, a]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (prim.center[a] - origin[a]) / denom
    pu = origin[u_ax] + t * dirs[:, u_ax]
    pv = origin[v_ax] + t * dirs[:, v_ax]
    half_u, half_v = prim.size[0] / 2.0, prim.size[1] / 2.0
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) \
        & (np.abs(pu - prim.center[u_ax]) <= half_u) \
        & (np.abs(pv - prim.center[v_ax]) <= half_v)
    t = np.where(hit, t, np.inf)
    uv = np.stack([pu - prim.center[u_ax] + half_u,
                   pv - prim.center[v_ax] + half_v], axis=-1)
    normal = np.zeros(3)
    normal[a] = float(prim.sign)
    return t, uv, np.broadcast_to(normal, dirs.shape)


def _ray_box(origin, dirs, prim: BoxPrim):
    lo = np.asarray(prim.center) - np.asarray(prim.size) / 2.0
    hi = np.asarray(prim.center) + np.asarray(prim.size) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t_lo = (lo - origin) * inv
    t_hi = (hi - origin) * inv
    t_near = np.minimum(t_lo, t_hi)
    t_far = np.maximum(t_lo, t_hi)
    t_enter = t_near.max(axis=1)
    t_exit = t_far.min(axis=1)
    hit_enter = (t_enter <= t_exit) & (t_enter > 1e-9)
    hit_exit = (t_enter <= t_exit) & (t_enter <= 1e-9) & (t_exit > 1e-9)
    t = np.where(hit_enter, t_enter, np.where(hit_exit, t_exit, np.inf))

    pts = origin + t[:, None] * dirs
    # face: the axis that bounded the interval, sign from which slab
    axis = np.where(hit_enter, t_near.argmax(axis=1), t_far.argmin(axis=1))
    centered = pts - np.asarray(prim.center)
    sign = np.sign(np.take_along_axis(centered, axis[:, None], 1)[:, 0])
    sign = np.where(sign == 0, 1.0, sign)
    normal = np.zeros_like(dirs)
    np.put_along_axis(normal, axis[:, None], sign[:, None], 1)

    # in-face surface coordinates, measured from the face's lower corner
    uv = np.zeros((len(dirs), 2))
    for a in range(3):
        u_ax, v_ax = [x for x in range(3) if x != a]
        sel = axis == a
        uv[sel, 0] = pts[sel, u_ax] - lo[u_ax]
        uv[sel, 1] = pts[sel, v_ax] - lo[v_ax]
    return t, uv, normal


def render(spec: SceneSpec, frame: int) -> tuple[np.ndarray, DepthMap]:
    """Raycast one frame: (RGB uint8 image, exact DepthMap); depth 0 = no hit."""
    if not (0 <= frame < len(spec.poses)):
        raise IndexError(f"frame {frame} out of range (0..{len(spec.poses) - 1})")
    k = spec.camera
    pose = spec.poses[frame]
    cam = Camera(k, pose)

    uu, vv = np.meshgrid(np.arange(k.width), np.arange(k.height))
    dirs_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy,
                         np.ones_like(uu, dtype=np.float64)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ pose.rotation.T  # ray parameter t equals camera-frame depth
    origin = pose.translation

    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_prim = np.full(n, -1, dtype=np.int64)
    hits = []
    for pi, prim in enumerate(spec.primitives):
        caster = _ray_plane if isinstance(prim, PlanePrim) else _ray_box
        t, uv, normal = caster(origin, dirs, prim)
        hits.append((t, uv, normal))
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_prim[closer] = pi

    gray = np.zeros(n)
    ray_unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    for pi, prim in enumerate(spec.primitives):
        sel = best_prim == pi
        if not sel.any():
            continue
        t, uv, normal = hits[pi]
        albedo = prim.texture.albedo(uv[sel, 0], uv[sel, 1])
        lambert = np.abs((normal[sel] * ray_unit[sel]).sum(axis=1))
        gray[sel] = albedo * (AMBIENT + (1.0 - AMBIENT) * lambert)

    img = np.round(np.clip(gray, 0, 1) * 255.0).astype(np.uint8)
    image = np.repeat(img.reshape(k.height, k.width, 1), 3, axis=2)
    depth = np.where(np.isfinite(best_t), best_t, 0.0).reshape(k.height, k.width)
    return image, DepthMap(values=depth.astype(np.float32), camera=cam)


# -- analytic geometry --------------------------------------------------------

def plane_mesh(prim: PlanePrim) -> TriMesh:
    a = prim.axis
    u_ax, v_ax = prim.inplane_axes()
    center = np.asarray(prim.center, dtype=np.float64)
    corners = []
    for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        p = center.copy()
        p[u_ax] += du * prim.size[0] / 2.0
        p[v_ax] += dv * prim.size[1] / 2.0
        corners.append(p)
    tris = [(0, 1, 2), (0, 2, 3)] if prim.sign > 0 else [(0, 2, 1), (0, 3, 2)]
    return TriMesh(np.array(corners), np.array(tris, dtype=np.int64))


def box_mesh(prim: BoxPrim) -> TriMesh:
    c = np.asarray(prim.center, dtype=np.float64)
    s = np.asarray(prim.size, dtype=np.float64) / 2.0
    corners = np.array([[dx, dy, dz] for dx in (-1, 1) for dy in (-1, 1)
                        for dz in (-1, 1)], dtype=np.float64)
    verts = c + corners * s
    # index: bit2 = x, bit1 = y, bit0 = z (outward winding per face)
    faces = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for q in faces:
        tris.append((q[0], q[1], q[2]))
        tris.append((q[0], q[2], q[3]))
    return TriMesh(verts, np.array(tris, dtype=np.int64))


def analytic_mesh(spec: SceneSpec) -> TriMesh:
    """Exact triangulation of all primitives, disjoint index ranges."""
    meshes = [plane_mesh(p) if isinstance(p, PlanePrim) else box_mesh(p)
              for p in spec.primitives]
    return merge_meshes(meshes)


# -- dataset emission ---------------------------------------------------------

def emit_dataset(spec: SceneSpec, out_dir) -> Path:
    """Write the directory layout the dataset loader consumes, plus gt_mesh.ply."""
    out = Path(out_dir)
    for sub in ("color", "pose", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    save_intrinsics(out / "intrinsics.txt", spec.camera)
    for i in range(len(spec.poses)):
        image, depth = render(spec, i)
        Image.fromarray(image).save(out / "color" / f"{i:06d}.png")
        write_depth_png(out / "depth" / f"{i:06d}.png", depth.values)
        save_pose(out / "pose" / f"{i:06d}.txt", spec.poses[i])
    save_ply(out / "gt_mesh.ply", analytic_mesh(spec), binary=True)
    return out


# -- scene config files -------------------------------------------------------

def save_scene_config(path, spec: SceneSpec) -> None:
    cp = configparser.ConfigParser()
    cp["scene"] = {"version": "1"}
    k = spec.camera
    cp["camera"] = {"fx": repr(k.fx), "fy": repr(k.fy), "cx": repr(k.cx),
                    "cy": repr(k.cy), "width": str(k.width), "height": str(k.height)}
    traj = {"kind": "explicit"}
    for i, pose in enumerate(spec.poses):
        traj[f"pose_{i:03d}"] = " ".join(f"{x:.17g}" for x in pose.matrix().reshape(-1))
    cp["trajectory"] = traj
    for i, prim in enumerate(spec.primitives):
        sec = {}
        tex = prim.texture
        if isinstance(prim, PlanePrim):
            sec["kind"] = "plane"
            sec["center"] = " ".join(repr(x) for x in prim.center)
            sec["axis"] = "xyz"[prim.axis]
            sec["sign"] = str(prim.sign)
            sec["size"] = " ".join(repr(x) for x in prim.size)
        else:
            sec["kind"] = "box"
            sec["center"] = " ".join(repr(x) for x in prim.center)
            sec["size"] = " ".join(repr(x) for x in prim.size)
        sec.update({"texture": tex.kind, "tex_scale": repr(tex.scale),
                    "contrast": repr(tex.contrast), "tex_seed": str(tex.seed),
                    "base": repr(tex.base)})
        cp[f"primitive.{i}"] = sec
    with open(path, "w") as f:
        cp.write(f)


def load_scene_config(path) -> SceneSpec:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"cannot read scene config {path}")
    cam = cp["camera"]
    intr = Intrinsics(fx=cam.getfloat("fx"), fy=cam.getfloat("fy"),
                      cx=cam.getfloat("cx"), cy=cam.getfloat("cy"),
                      width=cam.getint("width"), height=cam.getint("height"))

    traj = cp["trajectory"]
    kind = traj.get("kind", "explicit")
    if kind == "orbit":
        poses = orbit_trajectory(
            center=[float(x) for x in traj.get("center", "0 0 0").split()],
            radius=traj.getfloat("radius", 1.0),
            frames=traj.getint("frames", 12),
            pitch_deg=traj.getfloat("pitch_deg", 0.0),
            look=traj.get("look", "outward"),
            yaw_offset_deg=traj.getfloat("yaw_offset_deg", 0.0),
            sweep_deg=traj.getfloat("sweep_deg", 360.0),
        )
    elif kind == "explicit":
        poses = []
        for key in sorted(k for k in traj if k.startswith("pose_")):
            vals = [float(x) for x in traj[key].split()]
            if len(vals) != 16:
                raise ValueError(f"trajectory entry {key} needs 16 values")
            poses.append(Pose.from_matrix(np.array(vals).reshape(4, 4)))
        poses = tuple(poses)
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")

    prims = []
    for name in sorted(s for s in cp.sections() if s.startswith("primitive.")):
        sec = cp[name]
        tex = Texture(kind=sec.get("texture", "checker+noise"),
                      scale=sec.getfloat("tex_scale", 0.4),
                      contrast=sec.getfloat("contrast", 0.8),
                      seed=sec.getint("tex_seed", 0),
                      base=sec.getfloat("base", 0.5))
        center = tuple(float(x) for x in sec["center"].split())
        if sec["kind"] == "plane":
            prims.append(PlanePrim(center=center, axis=_AXES[sec["axis"]],
                                   sign=sec.getint("sign", 1),
                                   size=tuple(float(x) for x in sec["size"].split()),
                                   texture=tex))
        elif sec["kind"] == "box":
            prims.append(BoxPrim(center=center,
                                 size=tuple(float(x) for x in sec["size"].split()),
                                 texture=tex))
        else:
            raise ValueError(f"unknown primitive kind {sec['kind']!r} in {name}")
    return SceneSpec(camera=intr, poses=tuple(poses), primitives=tuple(prims))
