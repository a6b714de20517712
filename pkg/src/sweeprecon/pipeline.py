"""End-to-end orchestration: dataset -> encoder -> cost volumes ->

compensation -> grid fusion -> TSDF -> mesh, plus the ablation harness and
dump inspection.

Determinism contract: identical config + dataset + seeds produce
byte-identical meshes, CSVs, and reports at any thread count.  Per-keyframe
work may run on a thread pool, but results are assembled and accumulated in
keyframe order, wall-clock timings live in a separate file, and reports only
reference artifact file names, never absolute paths.

With the default confidence-preserving weights (see ``rccv``), every
compensation mode leaves the matching-confidence channel bit-identical, so
the deterministic decoders produce the same geometry for all compensated
configurations; the ablation rows still exercise genuinely different feature
volumes, and loading a weights file lifts the coincidence.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import containers
from .camera import Camera, DepthPlanes, make_log_planes, unproject_array
from .config import PipelineConfig
from .costvol import CostVolume, build_cost_volume
from .dataset import (Frame, KeyframeBundle, assign_references, load_sequence,
                      select_keyframes)
from .encoder import (EncoderSpec, FeatureMap, cell_center_pixels, encode,
                      reduce_channels)
from .fusion import (VoxelGrid, backproject_baseline, frustum_bounds, fuse,
                     grid_from_bounds, make_grid, points_bounds)
from .mesh import TriMesh, marching_cubes, sample_points, save_ply
from .metrics import MeshReport, mesh_metrics, tsdf_compare
from .rccv import (CompensationWeights, contextual_compensate, default_weights,
                   footprint_bytes, ray_compensate)
from .synth import load_scene_config  # noqa: F401  (re-exported for the CLI)
from .tsdf import (DepthMap, TsdfVolume, decode_depth_softargmax, decode_volume,
                   integrate_sequence, make_tsdf, mark_unobserved_columns,
                   peak_confidence)

FEATURE_SCALE = 0.125  # cost volumes live at 1/8 image resolution


def parallel_map(fn, items, threads: int) -> list:
    """Order-preserving map, optionally on a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def encoder_spec(cfg: PipelineConfig) -> EncoderSpec:
    return EncoderSpec(kind=cfg.encoder, patch=cfg.patch,
                       out_channels=cfg.feat_channels, seed=cfg.seed)


def confidence_channel(cfg: PipelineConfig) -> int:
    """Index of the matching-confidence channel in every pipeline volume.

    Channel reduction places it last among the cv channels and the
    compensation kernels pass it through to the same position.
    """
    return cfg.cv_channels - 1


def build_weights(cfg: PipelineConfig, with_uni: bool | None = None
                  ) -> CompensationWeights | None:
    if cfg.compensation == "none":
        return None
    if cfg.comp_weights:
        return containers.load_compensation_weights(cfg.comp_weights)
    if with_uni is None:
        with_uni = cfg.compensation == "ray+ctx" and cfg.ctx_mode == "uni"
    return default_weights(num_planes=cfg.num_planes, cv_channels=cfg.cv_channels,
                           ctx_channels=cfg.feat_channels, c_out=cfg.cv_channels,
                           seed=cfg.seed, ray_kernel_size=cfg.ray_kernel_size,
                           with_uni=with_uni)


@dataclass
class SceneData:
    frames: list[Frame]
    keyframes: list[Frame]
    bundles: list[KeyframeBundle]
    planes: DepthPlanes
    feats: dict[int, FeatureMap]


def prepare_scene(cfg: PipelineConfig, dataset_dir) -> SceneData:
    frames = load_sequence(dataset_dir)
    keyframes = select_keyframes(frames, cfg.kf_trans, cfg.kf_rot)
    bundles = assign_references(keyframes, frames, cfg.num_refs,
                                t_ideal=cfg.t_ideal, rot_weight=cfg.rot_weight)
    planes = make_log_planes(cfg.d_min, cfg.d_max, cfg.num_planes)

    needed: dict[int, Frame] = {}
    for b in bundles:
        needed[b.keyframe.index] = b.keyframe
        for r in b.references:
            needed[r.index] = r
    spec = encoder_spec(cfg)
    projection = None
    if cfg.encoder_weights:
        projection = containers.load_weight_matrix(cfg.encoder_weights)
    order = sorted(needed)
    feat_list = parallel_map(lambda i: encode(needed[i], spec, projection=projection),
                             order, cfg.threads)
    feats = dict(zip(order, feat_list))
    return SceneData(frames=frames, keyframes=keyframes, bundles=bundles,
                     planes=planes, feats=feats)


def reduced_cost_volume(cfg: PipelineConfig, bundle: KeyframeBundle,
                        scene: SceneData) -> tuple[CostVolume, CostVolume]:
    """(raw cost volume, channel-reduced cost volume) for one keyframe."""
    raw = build_cost_volume(bundle, scene.feats, scene.planes,
                            agg=cfg.ref_agg, interp=cfg.interp)
    reduced_data = reduce_channels(raw.data, cfg.cv_channels, cfg.seed,
                                   passthrough=0)
    reduced = CostVolume(planes=raw.planes, channels=cfg.cv_channels,
                         height=raw.height, width=raw.width, data=reduced_data,
                         valid_mask=raw.valid_mask, depth_planes=raw.depth_planes)
    return raw, reduced


def compensated_volume(cfg: PipelineConfig, reduced: CostVolume,
                       key_feat: FeatureMap, weights: CompensationWeights | None):
    """Apply the configured compensation; returns an object with .data/.valid_mask."""
    if cfg.compensation == "none":
        return reduced
    _, rcv = ray_compensate(reduced, weights, channel_pick=cfg.ray_channel_pick)
    if cfg.compensation == "ray":
        return rcv
    return contextual_compensate(rcv, key_feat, weights, mode=cfg.ctx_mode)


@dataclass
class KeyframeVolume:
    index: int
    camera: Camera  # full-resolution keyframe camera
    volume: object  # CostVolume | RayCompensatedVolume | Rccv
    raw_cv: CostVolume
    depth: DepthMap  # decoded at 1/8 resolution, confidence-gated


def keyframe_volumes(cfg: PipelineConfig, scene: SceneData,
                     weights: CompensationWeights | None) -> list[KeyframeVolume]:
    conf_ch = confidence_channel(cfg)

    def work(bundle: KeyframeBundle) -> KeyframeVolume:
        raw, reduced = reduced_cost_volume(cfg, bundle, scene)
        vol = compensated_volume(cfg, reduced, scene.feats[bundle.keyframe.index],
                                 weights)
        cam8 = bundle.keyframe.camera.scaled(FEATURE_SCALE)
        depth = decode_depth_softargmax(vol, scene.planes, conf_ch, cam8,
                                        tau=cfg.tau)
        if cfg.min_confidence > 0:
            peak = peak_confidence(vol, conf_ch)
            gated = np.where(peak >= cfg.min_confidence, depth.values, 0.0)
            depth = DepthMap(values=gated.astype(np.float32), camera=cam8)
        return KeyframeVolume(index=bundle.keyframe.index,
                              camera=bundle.keyframe.camera,
                              volume=vol, raw_cv=raw, depth=depth)

    return parallel_map(work, scene.bundles, cfg.threads)


def depth_observation_bounds(cfg: PipelineConfig, kvols: list[KeyframeVolume]
                             ) -> tuple[np.ndarray, np.ndarray]:
    """AABB of all valid decoded-depth observations, padded by the truncation."""
    pts = []
    for kv in kvols:
        vals = kv.depth.values
        h, w = vals.shape
        valid = vals.reshape(-1) > 0
        if valid.any():
            cam_pts = unproject_array(kv.depth.camera,
                                      _cell_pixel_coords(h, w)[valid],
                                      vals.reshape(-1)[valid])
            pts.append(cam_pts)
    if not pts:
        raise ValueError("no valid depth observations to bound the grid")
    return points_bounds(np.concatenate(pts), pad_m=cfg.trunc_m)


def _cell_pixel_coords(h: int, w: int) -> np.ndarray:
    """Integer pixel centers (u, v) of a 1/8-resolution depth map."""
    r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([c, r], axis=-1).reshape(-1, 2).astype(np.float64)


def make_pipeline_grid(cfg: PipelineConfig, kvols: list[KeyframeVolume],
                       channels: int) -> VoxelGrid:
    if cfg.grid_bounds == "frusta":
        lo, hi = frustum_bounds([kv.camera for kv in kvols], cfg.d_min, cfg.d_max)
    else:
        lo, hi = depth_observation_bounds(cfg, kvols)
    return grid_from_bounds(lo, hi, cfg.voxel_size, channels,
                            pad_voxels=cfg.grid_pad)


def depth_maps_to_tsdf(cfg: PipelineConfig, depths: list[DepthMap],
                       template: VoxelGrid) -> TsdfVolume:
    vol = make_tsdf(template.origin, template.dims, template.voxel_size,
                    trunc=cfg.trunc_m)
    return integrate_sequence(vol, depths)


def gt_tsdf_from_frames(cfg: PipelineConfig, frames: list[Frame],
                        template: VoxelGrid) -> TsdfVolume | None:
    depths = [DepthMap(values=f.gt_depth, camera=f.camera)
              for f in frames if f.gt_depth is not None]
    if not depths:
        return None
    vol = make_tsdf(template.origin, template.dims, template.voxel_size,
                    trunc=cfg.trunc_m)
    integrate_sequence(vol, depths)
    return mark_unobserved_columns(vol, gravity_axis=cfg.gravity_axis)


def observed_space_mask(gt_vol: TsdfVolume, points: np.ndarray) -> np.ndarray:
    """True for points whose enclosing voxel was observed by the gt scan."""
    idx = np.round(gt_vol.grid.world_to_grid(points)).astype(np.int64)
    dims = np.array(gt_vol.grid.dims)
    inside = np.all((idx >= 0) & (idx < dims), axis=1)
    out = np.zeros(len(points), dtype=bool)
    ii = idx[inside]
    out[inside] = gt_vol.grid.weight[ii[:, 0], ii[:, 1], ii[:, 2]] > 0
    return out


def evaluate_mesh_against_gt(cfg: PipelineConfig, pred: TriMesh, gt_mesh: TriMesh,
                             gt_vol: TsdfVolume | None) -> MeshReport:
    """Vertex-based accuracy against area-sampled gt completeness targets."""
    gt_pts = sample_points(gt_mesh, cfg.sample_density, seed=cfg.seed)
    mask = None
    if cfg.protocol == "masked":
        if gt_vol is None:
            raise ValueError("masked protocol needs a ground-truth TSDF")
        mask = observed_space_mask(gt_vol, pred.vertices)
    return mesh_metrics(pred.vertices, gt_pts, thresholds=cfg.thresholds,
                        occlusion_mask=mask)


# -- reconstruct --------------------------------------------------------------

def reconstruct(cfg: PipelineConfig, dataset_dir, out_dir,
                dump_cv: bool = False, dump_grid: bool = False) -> dict:
    """Full pipeline run; writes mesh/TSDF/report artifacts, returns the report."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    def lap(name):
        timings[name] = round(time.perf_counter() - t0, 3)

    scene = prepare_scene(cfg, dataset_dir)
    lap("prepare")
    weights = build_weights(cfg)
    kvols = keyframe_volumes(cfg, scene, weights)
    lap("cost_volumes")

    if dump_cv:
        cv_dir = out / "cv"
        cv_dir.mkdir(exist_ok=True)
        for kv in kvols:
            containers.save_cost_volume(cv_dir / f"{kv.index:06d}.bin", kv.raw_cv)

    vol_channels = kvols[0].volume.data.shape[1]
    grid = make_pipeline_grid(cfg, kvols, channels=vol_channels)
    fuse([(kv.volume, kv.camera) for kv in kvols], scene.planes, grid)
    lap("fusion")

    if cfg.decoder == "volume":
        score_ch = cfg.score_channel if cfg.score_channel is not None \
            else confidence_channel(cfg)
        tsdf = decode_volume(grid, score_ch, cfg.iso, cfg.iso_scale,
                             trunc=cfg.trunc_m)
    else:
        tsdf = depth_maps_to_tsdf(cfg, [kv.depth for kv in kvols], grid)
    lap("tsdf")

    mesh = marching_cubes(tsdf, iso=0.0)
    lap("mesh")

    save_ply(out / "mesh.ply", mesh, binary=True)
    containers.save_tsdf(out / "tsdf.bin", tsdf)
    if dump_grid:
        containers.save_grid(out / "grid.bin", grid)
    cfg.save(out / "config.json")

    gt_vol = gt_tsdf_from_frames(cfg, scene.frames, grid)
    report_metrics: dict = {}
    if gt_vol is not None:
        containers.save_tsdf(out / "gt_tsdf.bin", gt_vol)
        l1, bce = tsdf_compare(tsdf, gt_vol)
        report_metrics["tsdf_l1"] = l1
        report_metrics["occupancy_bce"] = bce

    gt_mesh_path = Path(dataset_dir) / "gt_mesh.ply"
    if gt_mesh_path.is_file() and mesh.num_triangles:
        from .mesh import load_ply
        gt_mesh = load_ply(gt_mesh_path)
        report = evaluate_mesh_against_gt(cfg, mesh, gt_mesh, gt_vol)
        report_metrics["mesh"] = report.to_dict()
        _write_metrics_csv(out / "metrics.csv", report)
    lap("evaluate")

    rccv_shape = (cfg.num_planes, vol_channels,
                  kvols[0].volume.data.shape[2], kvols[0].volume.data.shape[3])
    run_report = {
        "config": cfg.to_dict(),
        "dataset": {
            "frames": len(scene.frames),
            "keyframes": len(scene.keyframes),
            "references_per_keyframe": cfg.num_refs,
        },
        "volume": {
            "rccv_shape": list(rccv_shape),
            "footprint_bytes_fp16": footprint_bytes(rccv_shape, 2),
            "footprint_bytes_fp32": footprint_bytes(rccv_shape, 4),
        },
        "grid": {
            "dims": list(grid.dims),
            "voxel_size": grid.voxel_size,
            "origin": [float(x) for x in grid.origin],
            "observed_voxels": int(grid.observed.sum()),
        },
        "mesh": {"vertices": mesh.num_vertices, "triangles": mesh.num_triangles},
        "metrics": report_metrics,
        "artifacts": sorted(p.name for p in out.iterdir() if p.is_file()),
    }
    (out / "report.json").write_text(
        json.dumps(run_report, indent=2, sort_keys=True) + "\n")
    lap("total")
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    return run_report


def _write_metrics_csv(path, report: MeshReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["accuracy", "completeness", "chamfer"]
        row = [f"{report.accuracy:.6f}", f"{report.completeness:.6f}",
               f"{report.chamfer:.6f}"]
        for t, p, r, f1 in zip(report.thresholds, report.precision,
                               report.recall, report.f1):
            header += [f"precision@{t:g}", f"recall@{t:g}", f"f1@{t:g}"]
            row += [f"{p:.6f}", f"{r:.6f}", f"{f1:.6f}"]
        w.writerow(header)
        w.writerow(row)


# -- ablation harness ---------------------------------------------------------

ABLATION_ROWS = (
    # (group, row key, feature source, ray, ctx mode)
    ("features", "backproject", "backproject", False, ""),
    ("features", "costvol", "costvol", False, ""),
    ("ray", "costvol", "costvol", False, ""),
    ("ray", "costvol_ray", "costvol", True, ""),
    ("ctx", "costvol_ray_concat", "costvol", True, "concat"),
    ("ctx", "costvol_ray_uni", "costvol", True, "uni"),
    ("ctx", "costvol_ray_group", "costvol", True, "group"),
)


def ablate(cfg: PipelineConfig, dataset_dir, out_dir,
           groups: tuple[str, ...] = ("features", "ray", "ctx")) -> Path:
    """Run the configuration grid and emit one CSV row per Table-style cell.

    All rows share scene preparation, reduced cost volumes, and grid
    geometry; every row decodes through the volume decoder so the downstream
    head is identical across feature constructions.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = prepare_scene(cfg, dataset_dir)
    gt_mesh_path = Path(dataset_dir) / "gt_mesh.ply"
    if not gt_mesh_path.is_file():
        raise FileNotFoundError(f"ablation needs {gt_mesh_path}")
    from .mesh import load_ply
    gt_mesh = load_ply(gt_mesh_path)

    conf_ch = confidence_channel(cfg)
    weights = build_weights(cfg.replace(compensation="ray+ctx", ctx_mode="uni"),
                            with_uni=True)

    base_cfg = cfg.replace(compensation="none")
    reduced_list = []
    for bundle in scene.bundles:
        _, reduced = reduced_cost_volume(base_cfg, bundle, scene)
        reduced_list.append((bundle, reduced))

    # shared grid geometry from the uncompensated decoded depths
    kvols_bounds = [
        KeyframeVolume(index=b.keyframe.index, camera=b.keyframe.camera,
                       volume=red, raw_cv=red,
                       depth=_gated_depth(base_cfg, red, scene.planes,
                                          b.keyframe.camera, conf_ch))
        for b, red in reduced_list
    ]
    template = make_pipeline_grid(cfg, kvols_bounds, channels=1)
    gt_vol = gt_tsdf_from_frames(cfg, scene.frames, template)

    needed = [key for _, key, *_ in
              [r for r in ABLATION_ROWS if r[0] in groups]]
    results: dict[str, MeshReport] = {}

    def evaluate_volumes(key: str, items, channels: int) -> MeshReport | None:
        grid = make_grid(template.origin, template.dims, cfg.voxel_size, channels)
        if key == "backproject":
            backproject_baseline(items, grid)
            score_ch = -1
        else:
            fuse(items, scene.planes, grid)
            score_ch = conf_ch
        tsdf = decode_volume(grid, score_ch, cfg.iso, cfg.iso_scale,
                             trunc=cfg.trunc_m)
        mesh = marching_cubes(tsdf, iso=0.0)
        save_ply(out / f"mesh_{key}.ply", mesh, binary=True)
        if mesh.num_triangles == 0:
            return None
        return evaluate_mesh_against_gt(cfg, mesh, gt_mesh, gt_vol)

    for key in dict.fromkeys(needed):
        if key in results:
            continue
        if key == "backproject":
            items = [(scene.feats[b.keyframe.index], b.keyframe.camera)
                     for b, _ in reduced_list]
            results[key] = evaluate_volumes(key, items, cfg.feat_channels)
            continue
        if key == "costvol":
            row_cfg = cfg.replace(compensation="none")
        elif key == "costvol_ray":
            row_cfg = cfg.replace(compensation="ray")
        else:
            row_cfg = cfg.replace(compensation="ray+ctx",
                                  ctx_mode=key.rsplit("_", 1)[1])
        vols = [(compensated_volume(row_cfg, red, scene.feats[b.keyframe.index],
                                    weights), b.keyframe.camera)
                for b, red in reduced_list]
        results[key] = evaluate_volumes(key, vols, vols[0][0].data.shape[1])

    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group", "feature_source", "ray_compensation", "ctx_mode",
                    "accuracy", "completeness", "chamfer", "f1@0.05"])
        for group, key, source, ray, ctx in ABLATION_ROWS:
            if group not in groups:
                continue
            rep = results[key]
            if rep is None:
                vals = ["nan"] * 4
            else:
                p, r, f1 = rep.at(0.05) if 0.05 in rep.thresholds else (0, 0, 0)
                vals = [f"{rep.accuracy:.6f}", f"{rep.completeness:.6f}",
                        f"{rep.chamfer:.6f}", f"{f1:.6f}"]
            w.writerow([group, source, "yes" if ray else "no", ctx] + vals)
    return csv_path


def _gated_depth(cfg: PipelineConfig, vol, planes, camera: Camera,
                 conf_ch: int) -> DepthMap:
    cam8 = camera.scaled(FEATURE_SCALE)
    depth = decode_depth_softargmax(vol, planes, conf_ch, cam8, tau=cfg.tau)
    if cfg.min_confidence > 0:
        peak = peak_confidence(vol, conf_ch)
        gated = np.where(peak >= cfg.min_confidence, depth.values, 0.0)
        depth = DepthMap(values=gated.astype(np.float32), camera=cam8)
    return depth


def inspect_cv(dump_path, pixel: tuple[int, int]) -> list[dict]:
    """Per-plane confidence profile of the ray through feature cell (row, col)."""
    cv = containers.load_cost_volume(dump_path)
    r, c = pixel
    if not (0 <= r < cv.height and 0 <= c < cv.width):
        raise ValueError(f"pixel ({r}, {c}) outside {cv.height}x{cv.width} volume")
    rows = []
    for pi in range(cv.planes):
        rows.append({
            "plane": pi,
            "depth": float(cv.depth_planes.values[pi]),
            "valid": bool(cv.valid_mask[pi, r, c]),
            "channels": [float(x) for x in cv.data[pi, :, r, c]],
        })
    return rows
