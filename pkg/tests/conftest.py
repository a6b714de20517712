"""Shared fixtures: small synthetic scenes reused across test modules."""

import numpy as np
import pytest

from sweeprecon.camera import Camera, Intrinsics, Pose
from sweeprecon.synth import BoxPrim, PlanePrim, SceneSpec, Texture, orbit_trajectory


@pytest.fixture(scope="session")
def vga_intrinsics() -> Intrinsics:
    return Intrinsics(fx=550.0, fy=550.0, cx=319.5, cy=239.5, width=640, height=480)


def frontal_plane_scene(intr: Intrinsics, depth: float, baselines,
                        tex_scale_px: float = 60.0, contrast: float = 0.9,
                        seed: int = 0) -> SceneSpec:
    """Fronto-parallel textured plane at z = depth, keyframe at the origin.

    baselines: list of 3-vectors, camera centers of the reference frames.
    The texture period is chosen to project to about tex_scale_px pixels;
    descriptors live on an 8 px cell grid, so usable matching texture needs
    wavelengths of several cells (bilinear interpolation between descriptors
    is only faithful for fields that vary slowly at the cell pitch).
    """
    poses = [Pose.identity()] + [Pose(np.eye(3), np.asarray(b, float)) for b in baselines]
    scale = tex_scale_px * depth / intr.fx
    # plane large enough to cover the view frustum at that depth from all cameras
    margin = 2.0 * depth * max(intr.width / (2 * intr.fx), intr.height / (2 * intr.fy)) + 1.0
    plane = PlanePrim(center=(0.0, 0.0, depth), axis=2, sign=-1,
                      size=(2 * margin, 2 * margin),
                      texture=Texture(kind="checker+noise", scale=scale,
                                      contrast=contrast, seed=seed))
    return SceneSpec(camera=intr, poses=tuple(poses), primitives=(plane,))


@pytest.fixture(scope="session")
def room_scene() -> SceneSpec:
    """Small textured room with two boxes and an inward-looking orbit."""
    intr = Intrinsics(fx=260.0, fy=260.0, cx=159.5, cy=119.5, width=320, height=240)
    half = 1.8
    wall_h = 2.1
    walls = [
        PlanePrim(center=(half, 0, wall_h / 2), axis=0, sign=-1,
                  size=(2 * half, wall_h), texture=Texture(scale=0.3, seed=1)),
        PlanePrim(center=(-half, 0, wall_h / 2), axis=0, sign=1,
                  size=(2 * half, wall_h), texture=Texture(scale=0.33, seed=2)),
        PlanePrim(center=(0, half, wall_h / 2), axis=1, sign=-1,
                  size=(2 * half, wall_h), texture=Texture(scale=0.29, seed=3)),
        PlanePrim(center=(0, -half, wall_h / 2), axis=1, sign=1,
                  size=(2 * half, wall_h), texture=Texture(scale=0.31, seed=4)),
    ]
    floor = PlanePrim(center=(0, 0, 0), axis=2, sign=1, size=(2 * half, 2 * half),
                      texture=Texture(scale=0.35, seed=5))
    boxes = [
        BoxPrim(center=(1.15, 0.65, 0.25), size=(0.5, 0.5, 0.5),
                texture=Texture(scale=0.18, seed=6)),
        BoxPrim(center=(-0.85, -1.05, 0.2), size=(0.45, 0.4, 0.4),
                texture=Texture(scale=0.16, seed=7)),
    ]
    poses = orbit_trajectory(center=(0, 0, 1.5), radius=1.0, frames=30,
                             pitch_deg=-10.0, look="inward")
    return SceneSpec(camera=intr, poses=poses,
                     primitives=tuple(walls) + (floor,) + tuple(boxes))


@pytest.fixture(scope="session")
def room_dataset(room_scene, tmp_path_factory):
    """The room scene rendered to disk once per session."""
    from sweeprecon.synth import emit_dataset

    out = tmp_path_factory.mktemp("room_dataset")
    emit_dataset(room_scene, out)
    return out
