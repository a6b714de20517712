"""Pipeline configuration: one flat, versioned, strictly-validated record.

Serialized as JSON; unknown keys are rejected so stale configs fail loudly.
CLI flags override file values, and the resolved config (all defaults
materialized) is echoed into every run report for reproducibility.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

CONFIG_VERSION = "1"


@dataclass
class PipelineConfig:
    version: str = CONFIG_VERSION

    # keyframe / reference selection
    kf_trans: float = 0.1  # meters
    kf_rot: float = 15.0  # degrees
    num_refs: int = 4
    t_ideal: float = 0.15
    rot_weight: float = 1.0 / 30.0

    # depth hypothesis planes
    d_min: float = 0.25
    d_max: float = 5.0
    num_planes: int = 64

    # matching encoder
    encoder: str = "patch"  # patch | grad
    patch: int = 3
    feat_channels: int = 8
    seed: int = 0
    encoder_weights: str | None = None

    # cost volume
    ref_agg: str = "meanvar"  # meanvar | concat
    cv_channels: int = 7
    interp: str = "bilinear"  # bilinear | nearest

    # compensation
    compensation: str = "ray+ctx"  # none | ray | ray+ctx
    ctx_mode: str = "group"  # concat | uni | group
    ray_kernel_size: int = 3
    ray_channel_pick: int = -1
    comp_weights: str | None = None

    # fusion grid
    voxel_size: float = 0.04
    grid_pad: int = 4
    grid_bounds: str = "auto"  # auto (observed-depth AABB) | frusta

    # decoders
    trunc: float | None = None  # None -> 3 * voxel_size
    tau: float = 0.05
    decoder: str = "depth"  # depth | volume
    score_channel: int | None = None  # None -> the confidence channel
    iso: float = 0.5
    iso_scale: float = 0.25
    min_confidence: float = 0.3

    # ground truth / evaluation
    gravity_axis: int = 2
    protocol: str = "atlas"  # atlas | masked
    thresholds: tuple[float, ...] = (0.01, 0.02, 0.03, 0.05, 0.10)
    sample_density: float = 2500.0  # gt surface samples per square meter

    # execution
    threads: int = 1

    _CHOICES = {
        "encoder": ("patch", "grad"),
        "ref_agg": ("meanvar", "concat"),
        "interp": ("bilinear", "nearest"),
        "compensation": ("none", "ray", "ray+ctx"),
        "ctx_mode": ("concat", "uni", "group"),
        "decoder": ("depth", "volume"),
        "grid_bounds": ("auto", "frusta"),
        "protocol": ("atlas", "masked"),
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version!r}")
        for key, choices in self._CHOICES.items():
            if getattr(self, key) not in choices:
                raise ValueError(f"{key} must be one of {choices}, "
                                 f"got {getattr(self, key)!r}")
        if not (0 < self.d_min < self.d_max):
            raise ValueError("need 0 < d_min < d_max")
        if self.num_planes < 2:
            raise ValueError("num_planes must be >= 2")
        if self.num_refs < 1:
            raise ValueError("num_refs must be >= 1")
        if self.voxel_size <= 0 or self.tau <= 0:
            raise ValueError("voxel_size and tau must be positive")
        if self.gravity_axis not in (0, 1, 2):
            raise ValueError("gravity_axis must be 0, 1, or 2")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if any(t <= 0 for t in self.thresholds):
            raise ValueError("thresholds must be positive")

    @property
    def trunc_m(self) -> float:
        return self.trunc if self.trunc is not None else 3.0 * self.voxel_size

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["thresholds"] = list(self.thresholds)
        return out

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = set(cls.field_names())
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "thresholds" in kwargs:
            kwargs["thresholds"] = tuple(kwargs["thresholds"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as f:
            data = json.load(f)
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)
