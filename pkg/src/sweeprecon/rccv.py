"""Ray and contextual compensation of plane-sweep cost volumes.

Ray compensation stacks one channel of every depth plane into a whole-ray
confidence profile, runs a small 2D convolution over it, and concatenates the
result onto every plane, so a single (plane, row, col) sample carries its
ray's full distribution.  Contextual compensation then concatenates the
keyframe's 2D appearance features onto every plane and mixes channels back
down, with per-plane kernels (``group``), one cross-plane kernel (``uni``),
or one shared per-plane map (``concat``).

Default weights are deterministic: the ray kernel is a per-channel identity
delta and every mixing map is a seeded row-orthonormal matrix whose last row
passes the matching-confidence channel through unchanged, so downstream
decoders always find calibrated confidences in output channel -1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .costvol import CostVolume
from .encoder import FeatureMap, seeded_orthonormal_map

CTX_MODES = ("concat", "uni", "group")


@dataclass(frozen=True)
class RayFeature:
    channels: int  # = number of depth planes
    height: int
    width: int
    data: np.ndarray  # (channels, height, width) float32


@dataclass(frozen=True)
class RayCompensatedVolume:
    """Cost volume with the ray feature concatenated onto every plane."""

    planes: int
    cv_channels: int  # channels before the ray feature was appended
    height: int
    width: int
    data: np.ndarray  # (planes, cv_channels + planes, height, width)
    valid_mask: np.ndarray
    depth_planes: object

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Rccv:
    planes: int
    channels: int
    height: int
    width: int
    data: np.ndarray  # (planes, channels, height, width) float32
    valid_mask: np.ndarray
    depth_planes: object


@dataclass(frozen=True)
class CompensationWeights:
    """Kernels for both compensation steps.

    ray_kernel mixes ray profiles spatially and across plane channels,
    shape (planes, planes, k, k).  plane_kernels holds one (c_out, c_in)
    matrix per plane for group mode; shared_kernel is the single map used
    by concat mode; uni_kernel, when present, is the
    (planes * c_out, planes * c_in) cross-plane matrix for uni mode.
    """

    ray_kernel: np.ndarray
    ray_bias: np.ndarray
    plane_kernels: np.ndarray  # (planes, c_out, c_in)
    plane_bias: np.ndarray  # (planes, c_out)
    shared_kernel: np.ndarray  # (c_out, c_in)
    shared_bias: np.ndarray  # (c_out,)
    uni_kernel: np.ndarray | None = None
    uni_bias: np.ndarray | None = None

    def __post_init__(self):
        if self.ray_kernel.ndim != 4 or self.ray_kernel.shape[2] % 2 == 0:
            raise ValueError("ray kernel must be (out, in, k, k) with odd k")
        if len(self.plane_kernels) != self.ray_kernel.shape[0]:
            raise ValueError("need one plane kernel per depth plane")

    @property
    def num_planes(self) -> int:
        return self.ray_kernel.shape[0]

    @property
    def c_out(self) -> int:
        return self.plane_kernels.shape[1]

    @property
    def c_in(self) -> int:
        return self.plane_kernels.shape[2]


def identity_ray_kernel(num_planes: int, size: int = 3) -> np.ndarray:
    """Per-channel delta: convolution with it reproduces the input exactly."""
    k = np.zeros((num_planes, num_planes, size, size), dtype=np.float32)
    idx = np.arange(num_planes)
    k[idx, idx, size // 2, size // 2] = 1.0
    return k


def default_weights(num_planes: int, cv_channels: int, ctx_channels: int,
                    c_out: int, seed: int, ray_kernel_size: int = 3,
                    with_uni: bool = False) -> CompensationWeights:
    """Deterministic weights: identity ray kernel + seeded orthonormal mixers.

    The mixing input is [cv channels | ray feature | context feature]; the
    confidence channel (cv channel -1) is passed through to output channel -1
    of every plane.
    """
    c_in = cv_channels + num_planes + ctx_channels
    conf = cv_channels - 1
    ss = np.random.SeedSequence([int(seed), 0x52C])
    children = ss.spawn(num_planes + 2)

    plane_kernels = np.stack([
        seeded_orthonormal_map(c_out, c_in, np.random.default_rng(children[i]),
                               passthrough=conf).astype(np.float32)
        for i in range(num_planes)
    ])
    shared = seeded_orthonormal_map(
        c_out, c_in, np.random.default_rng(children[num_planes]),
        passthrough=conf).astype(np.float32)

    uni = None
    uni_bias = None
    if with_uni:
        uni = _uni_kernel(num_planes, c_in, c_out, conf,
                          np.random.default_rng(children[num_planes + 1]))
        uni_bias = np.zeros(num_planes * c_out, dtype=np.float32)

    return CompensationWeights(
        ray_kernel=identity_ray_kernel(num_planes, ray_kernel_size),
        ray_bias=np.zeros(num_planes, dtype=np.float32),
        plane_kernels=plane_kernels,
        plane_bias=np.zeros((num_planes, c_out), dtype=np.float32),
        shared_kernel=shared,
        shared_bias=np.zeros(c_out, dtype=np.float32),
        uni_kernel=uni,
        uni_bias=uni_bias,
    )


def _uni_kernel(num_planes: int, c_in: int, c_out: int, conf: int,
                rng: np.random.Generator) -> np.ndarray:
    """Row-orthonormal cross-plane mixer preserving each plane's confidence.

    Output channel (i, c_out-1) is exactly input channel (i, conf); all other
    rows are orthonormal, orthogonal to every passthrough row, and mix the
    full (planes * c_in) input.
    """
    cols = num_planes * c_in
    rows = num_planes * c_out
    conf_cols = np.arange(num_planes) * c_in + conf
    g = rng.standard_normal((cols, rows - num_planes))
    g[conf_cols, :] = 0.0  # orthogonal to all passthrough directions
    q, r = np.linalg.qr(g)
    q = q * np.where(np.diag(r) >= 0, 1.0, -1.0)

    out = np.zeros((rows, cols), dtype=np.float32)
    gi = 0
    for i in range(num_planes):
        for o in range(c_out - 1):
            out[i * c_out + o] = q[:, gi]
            gi += 1
        out[i * c_out + c_out - 1, conf_cols[i]] = 1.0
    return out


def conv2d_full(profile: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Dense 2D cross-correlation, zero padding: (Cin, H, W) x (Cout, Cin, k, k)."""
    c_out, c_in, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(profile, ((0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    out = np.einsum("ihwkl,oikl->ohw", win, kernel, optimize=True)
    return (out + bias[:, None, None]).astype(np.float32)


def ray_compensate(cv: CostVolume, w: CompensationWeights, channel_pick: int = -1
                   ) -> tuple[RayFeature, RayCompensatedVolume]:
    """Build the ray feature from one channel of every plane and concatenate

    it onto all planes.  channel_pick selects which cost channel forms the
    profile (default: last).
    """
    if cv.channels < 1:
        raise ValueError("cost volume has no channels")
    profile = np.ascontiguousarray(cv.data[:, channel_pick, :, :])
    f_cr = conv2d_full(profile, w.ray_kernel, w.ray_bias)
    ray = RayFeature(channels=cv.planes, height=cv.height, width=cv.width, data=f_cr)

    data = np.empty((cv.planes, cv.channels + cv.planes, cv.height, cv.width),
                    dtype=np.float32)
    data[:, :cv.channels] = cv.data
    data[:, cv.channels:] = f_cr[None, :, :, :]
    rcv = RayCompensatedVolume(planes=cv.planes, cv_channels=cv.channels,
                               height=cv.height, width=cv.width, data=data,
                               valid_mask=cv.valid_mask, depth_planes=cv.depth_planes)
    return ray, rcv


def contextual_compensate(rcv: RayCompensatedVolume, key_feat: FeatureMap,
                          w: CompensationWeights, mode: str = "group") -> Rccv:
    """Concatenate the keyframe appearance feature onto every plane and mix

    channels down to c_out.  See module docstring for the three modes.
    """
    if mode not in CTX_MODES:
        raise ValueError(f"unknown contextual mode {mode!r}")
    if (key_feat.height, key_feat.width) != (rcv.height, rcv.width):
        raise ValueError("keyframe feature dims do not match the cost volume")
    d, c_rcv, h, wd = rcv.data.shape
    c_in = c_rcv + key_feat.channels
    if w.c_in != c_in:
        raise ValueError(f"weights expect {w.c_in} input channels, got {c_in}")

    stacked = np.empty((d, c_in, h, wd), dtype=np.float32)
    stacked[:, :c_rcv] = rcv.data
    stacked[:, c_rcv:] = key_feat.data[None]

    if mode == "group":
        out = np.einsum("ioc,ichw->iohw", w.plane_kernels, stacked, optimize=True)
        out += w.plane_bias[:, :, None, None]
    elif mode == "concat":
        out = np.einsum("oc,ichw->iohw", w.shared_kernel, stacked, optimize=True)
        out += w.shared_bias[None, :, None, None]
    else:  # uni: one dense map across all planes and channels
        if w.uni_kernel is None:
            raise ValueError("weights were built without a uni kernel")
        flat = stacked.reshape(d * c_in, h, wd)
        out = np.einsum("oc,chw->ohw", w.uni_kernel, flat, optimize=True)
        out += w.uni_bias[:, None, None]
        out = out.reshape(d, w.c_out, h, wd)

    return Rccv(planes=d, channels=w.c_out, height=h, width=wd,
                data=out.astype(np.float32), valid_mask=rcv.valid_mask,
                depth_planes=rcv.depth_planes)


def footprint_bytes(shape, precision_bytes: int) -> int:
    """Memory footprint of a dense volume with the given element size."""
    if precision_bytes <= 0 or any(s <= 0 for s in shape):
        raise ValueError("dims and precision must be positive")
    n = 1
    for s in shape:
        n *= int(s)
    return n * int(precision_bytes)
