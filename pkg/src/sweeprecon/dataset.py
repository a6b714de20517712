"""Posed RGB-D sequence ingestion and keyframe/reference selection.

Directory layout::

    root/
      intrinsics.txt        fx fy cx cy width height
      color/%06d.png        8-bit RGB
      pose/%06d.txt         16 floats, row-major 4x4, world-from-camera
      depth/%06d.png        optional, 16-bit millimeters, 0 = invalid

Frames whose pose file contains non-finite entries are dropped (and counted
in the log); a structurally broken pose file is an error.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import (Camera, Pose, load_intrinsics, load_pose_matrix,
                     rotation_angle_deg, translation_distance)
from .errors import DatasetError

log = logging.getLogger(__name__)

DEPTH_SCALE = 1000.0  # millimeters per meter in 16-bit depth PNGs

# keyframe gating, pose distance to the last kept frame
DEFAULT_KF_TRANS = 0.1  # meters
DEFAULT_KF_ROT = 15.0  # degrees

# reference-frame penalty: |translation gap - t_ideal| + rotation / ROT_PER_METER
DEFAULT_T_IDEAL = 0.15  # meters
DEFAULT_ROT_WEIGHT = 1.0 / 30.0  # penalty meters per degree


@dataclass(frozen=True)
class Frame:
    index: int
    image: np.ndarray  # (H, W, 3) uint8
    camera: Camera
    gt_depth: np.ndarray | None = None  # (H, W) float32 meters, 0 = invalid

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if (w, h) != (self.camera.width, self.camera.height):
            raise DatasetError(
                f"frame {self.index}: image is {w}x{h} but camera says "
                f"{self.camera.width}x{self.camera.height}"
            )
        if self.gt_depth is not None and self.gt_depth.shape != (h, w):
            raise DatasetError(f"frame {self.index}: depth shape {self.gt_depth.shape} "
                               f"does not match image {h, w}")


@dataclass(frozen=True)
class KeyframeBundle:
    keyframe: Frame
    references: tuple[Frame, ...]

    def __post_init__(self):
        if len(self.references) < 1:
            raise ValueError("a bundle needs at least one reference frame")
        idx = [f.index for f in self.references]
        if self.keyframe.index in idx:
            raise ValueError("keyframe cannot be its own reference")
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate reference frames")


def read_depth_png(path) -> np.ndarray:
    raw = np.asarray(Image.open(path))
    return (raw.astype(np.float32)) / DEPTH_SCALE


def write_depth_png(path, depth_m: np.ndarray) -> None:
    mm = np.round(np.asarray(depth_m, dtype=np.float64) * DEPTH_SCALE)
    Image.fromarray(np.clip(mm, 0, 65535).astype(np.uint16)).save(path)


def _frame_indices(color_dir: Path) -> list[int]:
    pat = re.compile(r"^(\d{6})\.png$")
    out = []
    for p in color_dir.iterdir():
        m = pat.match(p.name)
        if m:
            out.append(int(m.group(1)))
    return sorted(out)


def load_sequence(root_dir) -> list[Frame]:
    """Load all frames, sorted by index; drops frames with non-finite poses."""
    root = Path(root_dir)
    color_dir = root / "color"
    pose_dir = root / "pose"
    depth_dir = root / "depth"
    if not root.is_dir() or not color_dir.is_dir() or not pose_dir.is_dir():
        raise DatasetError(f"{root} is not a dataset directory (need color/ and pose/)")
    intr_path = root / "intrinsics.txt"
    if not intr_path.is_file():
        raise DatasetError(f"missing {intr_path}")
    intrinsics = load_intrinsics(intr_path)

    indices = _frame_indices(color_dir)
    if not indices:
        raise DatasetError(f"no color frames in {color_dir}")

    frames: list[Frame] = []
    dropped = 0
    for idx in indices:
        pose_path = pose_dir / f"{idx:06d}.txt"
        if not pose_path.is_file():
            raise DatasetError(f"missing pose file for frame {idx}")
        try:
            mat = load_pose_matrix(pose_path)
        except ValueError as exc:
            raise DatasetError(str(exc)) from exc
        if not np.all(np.isfinite(mat)):
            dropped += 1
            continue
        image = np.asarray(Image.open(color_dir / f"{idx:06d}.png").convert("RGB"))
        depth = None
        depth_path = depth_dir / f"{idx:06d}.png"
        if depth_path.is_file():
            depth = read_depth_png(depth_path)
        frames.append(Frame(index=idx, image=image,
                            camera=Camera(intrinsics, Pose.from_matrix(mat)),
                            gt_depth=depth))
    if dropped:
        log.warning("dropped %d frame(s) with non-finite poses from %s", dropped, root)
    if not frames:
        raise DatasetError(f"all frames in {root} had non-finite poses")
    return frames


def select_keyframes(frames: list[Frame],
                     t_thresh: float = DEFAULT_KF_TRANS,
                     r_thresh: float = DEFAULT_KF_ROT) -> list[Frame]:
    """Keep a frame when it moved >= t_thresh meters or r_thresh degrees

    relative to the last kept frame; the first frame is always kept.
    """
    if not frames:
        raise ValueError("empty frame list")
    if t_thresh <= 0 or r_thresh <= 0:
        raise ValueError("thresholds must be positive")
    kept = [frames[0]]
    for frame in frames[1:]:
        last = kept[-1]
        dt = translation_distance(last.camera.pose, frame.camera.pose)
        dr = rotation_angle_deg(last.camera.pose, frame.camera.pose)
        if dt >= t_thresh or dr >= r_thresh:
            kept.append(frame)
    return kept


def reference_penalty(keyframe: Frame, candidate: Frame,
                      t_ideal: float = DEFAULT_T_IDEAL,
                      rot_weight: float = DEFAULT_ROT_WEIGHT) -> float:
    dt = translation_distance(keyframe.camera.pose, candidate.camera.pose)
    dr = rotation_angle_deg(keyframe.camera.pose, candidate.camera.pose)
    return abs(dt - t_ideal) + rot_weight * dr


def assign_references(keyframes: list[Frame], all_frames: list[Frame], k: int,
                      t_ideal: float = DEFAULT_T_IDEAL,
                      rot_weight: float = DEFAULT_ROT_WEIGHT) -> list[KeyframeBundle]:
    """Pick, per keyframe, the k other frames with the lowest pose-distance penalty.

    Ties break on frame index so the result is deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    bundles = []
    for kf in keyframes:
        candidates = [f for f in all_frames if f.index != kf.index]
        if len(candidates) < k:
            raise ValueError(
                f"insufficient frames: keyframe {kf.index} has {len(candidates)} "
                f"candidates, needs {k}"
            )
        scored = sorted(candidates,
                        key=lambda f: (reference_penalty(kf, f, t_ideal, rot_weight), f.index))
        bundles.append(KeyframeBundle(keyframe=kf, references=tuple(scored[:k])))
    return bundles
