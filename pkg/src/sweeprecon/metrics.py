"""Mesh, depth, and TSDF comparison metrics.

3D metrics follow the usual nearest-neighbor definitions: accuracy is the
mean pred-to-gt distance, completeness the mean gt-to-pred distance, chamfer
their average; precision/recall/F1 are fractions within a threshold.  The
occlusion-masked protocol drops predicted points that lie in space the
ground-truth scan never observed, so hallucinated-but-plausible geometry is
not penalized on the accuracy side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .tsdf import TsdfVolume

DEFAULT_THRESHOLDS = (0.01, 0.02, 0.03, 0.05, 0.10)
HEADLINE_THRESHOLD = 0.05
_BCE_EPS = 1e-7


@dataclass(frozen=True)
class MeshReport:
    accuracy: float
    completeness: float
    chamfer: float
    thresholds: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    masked_pred_points: int = 0  # pred points excluded by the occlusion mask

    def at(self, threshold: float) -> tuple[float, float, float]:
        idx = self.thresholds.index(threshold)
        return self.precision[idx], self.recall[idx], self.f1[idx]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "chamfer": self.chamfer,
            "thresholds": list(self.thresholds),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "masked_pred_points": self.masked_pred_points,
        }


@dataclass(frozen=True)
class DepthReport:
    abs_diff: float
    abs_rel: float
    sq_rel: float
    rmse: float
    log_rmse: float
    delta_1: float
    delta_2: float
    delta_3: float
    valid_pixels: int
    excluded_pixels: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "abs_diff", "abs_rel", "sq_rel", "rmse", "log_rmse",
            "delta_1", "delta_2", "delta_3", "valid_pixels", "excluded_pixels")}


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def mesh_metrics(pred_pts: np.ndarray, gt_pts: np.ndarray,
                 thresholds=DEFAULT_THRESHOLDS,
                 occlusion_mask: np.ndarray | None = None) -> MeshReport:
    """Nearest-neighbor mesh metrics between two point sets.

    occlusion_mask, when given, is a per-pred-point boolean, True where the
    point lies in observed space; False points are excluded from accuracy and
    precision (they still count for nothing on the recall side, which only
    looks from gt to pred).
    """
    pred_pts = np.asarray(pred_pts, dtype=np.float64).reshape(-1, 3)
    gt_pts = np.asarray(gt_pts, dtype=np.float64).reshape(-1, 3)
    if len(pred_pts) == 0 or len(gt_pts) == 0:
        raise ValueError("point sets must be non-empty")
    thresholds = tuple(float(t) for t in thresholds)

    masked = 0
    acc_pts = pred_pts
    if occlusion_mask is not None:
        occlusion_mask = np.asarray(occlusion_mask, dtype=bool).reshape(-1)
        if occlusion_mask.shape[0] != len(pred_pts):
            raise ValueError("occlusion mask does not match pred points")
        masked = int((~occlusion_mask).sum())
        acc_pts = pred_pts[occlusion_mask]
        if len(acc_pts) == 0:
            raise ValueError("occlusion mask excluded every predicted point")

    d_pred = cKDTree(gt_pts).query(acc_pts)[0]
    d_gt = cKDTree(pred_pts).query(gt_pts)[0]

    accuracy = float(d_pred.mean())
    completeness = float(d_gt.mean())
    precision = tuple(float((d_pred <= t).mean()) for t in thresholds)
    recall = tuple(float((d_gt <= t).mean()) for t in thresholds)
    f1 = tuple(_f1(p, r) for p, r in zip(precision, recall))
    return MeshReport(accuracy=accuracy, completeness=completeness,
                      chamfer=0.5 * (accuracy + completeness),
                      thresholds=thresholds, precision=precision,
                      recall=recall, f1=f1, masked_pred_points=masked)


def f1_threshold_sweep(pred_pts: np.ndarray, gt_pts: np.ndarray,
                       t_list) -> list[tuple[float, float]]:
    """(threshold, f1) pairs over an ascending list of thresholds."""
    t_list = [float(t) for t in t_list]
    if any(t <= 0 for t in t_list) or any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("thresholds must be positive and ascending")
    report = mesh_metrics(pred_pts, gt_pts, thresholds=t_list)
    return list(zip(report.thresholds, report.f1))


def depth_metrics(pred, gt) -> DepthReport:
    """Standard 2D depth error metrics; pixels with pred or gt == 0 excluded."""
    pred_vals = np.asarray(pred.values if hasattr(pred, "values") else pred, dtype=np.float64)
    gt_vals = np.asarray(gt.values if hasattr(gt, "values") else gt, dtype=np.float64)
    if pred_vals.shape != gt_vals.shape:
        raise ValueError(f"depth shapes differ: {pred_vals.shape} vs {gt_vals.shape}")
    valid = (pred_vals > 0) & (gt_vals > 0)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no pixels with valid depth in both maps")
    d = pred_vals[valid]
    g = gt_vals[valid]
    diff = d - g
    ratio = np.maximum(d / g, g / d)
    log_diff = np.log(d) - np.log(g)
    return DepthReport(
        abs_diff=float(np.abs(diff).mean()),
        abs_rel=float((np.abs(diff) / g).mean()),
        sq_rel=float((diff ** 2 / g).mean()),
        rmse=float(np.sqrt((diff ** 2).mean())),
        log_rmse=float(np.sqrt((log_diff ** 2).mean())),
        delta_1=float((ratio < 1.25).mean()),
        delta_2=float((ratio < 1.25 ** 2).mean()),
        delta_3=float((ratio < 1.25 ** 3).mean()),
        valid_pixels=n,
        excluded_pixels=int(valid.size - n),
    )


def tsdf_compare(pred: TsdfVolume, gt: TsdfVolume) -> tuple[float, float]:
    """(L1 on TSDF values, BCE on occupancy) over the observed gt voxels.

    Occupancy means |tsdf| < 1; the predicted occupancy is clamped into
    [1e-7, 1 - 1e-7] before the cross entropy.
    """
    if pred.grid.dims != gt.grid.dims or pred.grid.voxel_size != gt.grid.voxel_size \
            or not np.allclose(pred.grid.origin, gt.grid.origin, atol=1e-9):
        raise ValueError("TSDF grids do not share geometry")
    obs = gt.grid.observed
    if not obs.any():
        raise ValueError("ground-truth volume has no observed voxels")
    p_vals = pred.values[obs].astype(np.float64)
    g_vals = gt.values[obs].astype(np.float64)
    l1 = float(np.abs(p_vals - g_vals).mean())

    p_occ = np.clip((np.abs(p_vals) < 1.0).astype(np.float64), _BCE_EPS, 1.0 - _BCE_EPS)
    g_occ = (np.abs(g_vals) < 1.0).astype(np.float64)
    bce = float(-(g_occ * np.log(p_occ) + (1.0 - g_occ) * np.log(1.0 - p_occ)).mean())
    return l1, bce
