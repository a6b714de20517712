"""Command-line interface.

Subcommands: synth, reconstruct, ablate, eval-mesh, eval-depth, inspect-cv,
export-mesh, render-depth.  Config file values come from --config (JSON);
explicit flags win over the file.  Exit codes: 0 success, 2 usage error,
3 data/IO error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import containers, pipeline
from .config import PipelineConfig
from .dataset import read_depth_png
from .errors import DatasetError
from .camera import Camera, load_intrinsics, load_pose
from .mesh import load_ply, marching_cubes, render_depth, sample_points, save_obj, save_ply
from .metrics import DEFAULT_THRESHOLDS, depth_metrics, f1_threshold_sweep, mesh_metrics
from .synth import emit_dataset, load_scene_config
from .tsdf import DepthMap

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# flags that override PipelineConfig fields (flag name == field name)
_CONFIG_FLAGS = [
    ("--kf-trans", "kf_trans", float, "keyframe translation threshold, meters"),
    ("--kf-rot", "kf_rot", float, "keyframe rotation threshold, degrees"),
    ("--num-refs", "num_refs", int, "reference frames per keyframe"),
    ("--d-min", "d_min", float, "nearest depth plane, meters"),
    ("--d-max", "d_max", float, "farthest depth plane, meters"),
    ("--num-planes", "num_planes", int, "depth plane count"),
    ("--encoder", "encoder", str, "matching descriptor kind: patch | grad"),
    ("--feat-channels", "feat_channels", int, "descriptor channels"),
    ("--seed", "seed", int, "seed for all deterministic randomness"),
    ("--encoder-weights", "encoder_weights", str, "descriptor projection file"),
    ("--cv-channels", "cv_channels", int, "cost volume channels after reduction"),
    ("--compensation", "compensation", str, "none | ray | ray+ctx"),
    ("--ctx-mode", "ctx_mode", str, "contextual mixing: concat | uni | group"),
    ("--comp-weights", "comp_weights", str, "compensation weights file"),
    ("--voxel-size", "voxel_size", float, "fusion voxel size, meters"),
    ("--grid-bounds", "grid_bounds", str, "grid extent rule: auto | frusta"),
    ("--trunc", "trunc", float, "TSDF truncation distance, meters"),
    ("--tau", "tau", float, "soft-argmax temperature"),
    ("--decoder", "decoder", str, "depth | volume"),
    ("--iso", "iso", float, "volume decoder iso level"),
    ("--min-confidence", "min_confidence", float, "depth gating threshold"),
    ("--protocol", "protocol", str, "mesh eval protocol: atlas | masked"),
    ("--threads", "threads", int, "worker thread cap"),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON; flags override it")
    for flag, _field, typ, helptext in _CONFIG_FLAGS:
        p.add_argument(flag, type=typ, default=None, help=helptext)


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {}
    for _flag, field, _typ, _help in _CONFIG_FLAGS:
        val = getattr(args, field, None)
        if val is not None:
            overrides[field] = val
    return cfg.replace(**overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sweeprecon",
        description="Plane-sweep cost-volume reconstruction and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene into a dataset dir")
    p.add_argument("--spec", required=True, help="scene config file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", help="run the full pipeline on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-cv", action="store_true",
                   help="also write per-keyframe cost-volume dumps")
    p.add_argument("--dump-grid", action="store_true",
                   help="also write the fused feature grid")
    _add_config_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="run the feature-construction ablation grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--groups", default="features,ray,ctx",
                   help="comma list of row groups to run")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval-mesh", help="3D mesh metrics between two PLY files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--protocol", choices=("atlas", "masked"), default="atlas")
    p.add_argument("--gt-tsdf", help="gt TSDF dump, required for masked protocol")
    p.add_argument("--thresholds", default=",".join(str(t) for t in DEFAULT_THRESHOLDS))
    p.add_argument("--density", type=float, default=2500.0,
                   help="gt surface sample density, points per square meter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for report.json / f1_sweep.csv")
    p.set_defaults(func=cmd_eval_mesh)

    p = sub.add_parser("eval-depth", help="2D depth metrics against dataset gt depth")
    p.add_argument("--gt", required=True, help="dataset dir with depth/ + pose/")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred-dir", help="directory of predicted 16-bit depth PNGs")
    src.add_argument("--mesh", help="predicted mesh; depth is rendered per frame")
    p.add_argument("--frames", help="comma list of frame indices (default: all)")
    p.add_argument("--out", help="directory for depth_report.json / csv")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("inspect-cv", help="per-plane confidence profile of one ray")
    p.add_argument("--cv", required=True, help="cost volume dump file")
    p.add_argument("--pixel", required=True, help="feature cell as row,col")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_inspect_cv)

    p = sub.add_parser("export-mesh", help="marching cubes on a TSDF dump")
    p.add_argument("--tsdf", required=True)
    p.add_argument("--out", required=True, help="output .ply or .obj")
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.set_defaults(func=cmd_export_mesh)

    p = sub.add_parser("render-depth", help="render a depth map from a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True, help="output 16-bit depth PNG")
    p.set_defaults(func=cmd_render_depth)
    return parser


def cmd_synth(args) -> int:
    spec = load_scene_config(args.spec)
    out = emit_dataset(spec, args.out)
    print(f"wrote {len(spec.poses)} frames to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args)
    report = pipeline.reconstruct(cfg, args.dataset, args.out,
                                  dump_cv=args.dump_cv, dump_grid=args.dump_grid)
    mesh_info = report["mesh"]
    print(f"mesh: {mesh_info['vertices']} vertices, {mesh_info['triangles']} triangles")
    if "mesh" in report["metrics"]:
        m = report["metrics"]["mesh"]
        print(f"chamfer vs gt: {m['chamfer']:.4f} m")
    print(f"report: {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    groups = tuple(g.strip() for g in args.groups.split(",") if g.strip())
    bad = set(groups) - {"features", "ray", "ctx"}
    if bad:
        print(f"unknown ablation groups: {sorted(bad)}", file=sys.stderr)
        return EXIT_USAGE
    csv_path = pipeline.ablate(cfg, args.dataset, args.out, groups=groups)
    print(f"ablation table: {csv_path}")
    return EXIT_OK


def cmd_eval_mesh(args) -> int:
    thresholds = tuple(float(t) for t in args.thresholds.split(","))
    pred = load_ply(args.pred)
    gt = load_ply(args.gt)
    gt_pts = sample_points(gt, args.density, seed=args.seed)
    mask = None
    if args.protocol == "masked":
        if not args.gt_tsdf:
            print("--protocol masked requires --gt-tsdf", file=sys.stderr)
            return EXIT_USAGE
        gt_vol = containers.load_tsdf(args.gt_tsdf)
        from .pipeline import observed_space_mask
        mask = observed_space_mask(gt_vol, pred.vertices)
    report = mesh_metrics(pred.vertices, gt_pts, thresholds=thresholds,
                          occlusion_mask=mask)
    sweep = f1_threshold_sweep(pred.vertices, gt_pts, sorted(thresholds))
    payload = report.to_dict()
    payload["protocol"] = args.protocol
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "mesh_report.json").write_text(text + "\n")
        with open(out / "f1_sweep.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", "f1"])
            for t, f1 in sweep:
                w.writerow([f"{t:g}", f"{f1:.6f}"])
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    root = Path(args.gt)
    depth_dir = root / "depth"
    if not depth_dir.is_dir():
        raise DatasetError(f"{root} has no depth/ directory")
    intr = load_intrinsics(root / "intrinsics.txt")
    indices = sorted(int(p.stem) for p in depth_dir.glob("*.png"))
    if args.frames:
        wanted = {int(x) for x in args.frames.split(",")}
        indices = [i for i in indices if i in wanted]
    if not indices:
        raise DatasetError("no frames to evaluate")

    mesh = load_ply(args.mesh) if args.mesh else None
    rows = []
    for idx in indices:
        gt_vals = read_depth_png(depth_dir / f"{idx:06d}.png")
        cam = Camera(intr, load_pose(root / "pose" / f"{idx:06d}.txt"))
        gt_map = DepthMap(values=gt_vals, camera=cam)
        if mesh is not None:
            pred_map = render_depth(mesh, cam)
        else:
            pred_vals = read_depth_png(Path(args.pred_dir) / f"{idx:06d}.png")
            pred_map = DepthMap(values=pred_vals, camera=cam)
        rep = depth_metrics(pred_map, gt_map)
        rows.append((idx, rep))

    keys = ["abs_diff", "abs_rel", "sq_rel", "rmse", "log_rmse",
            "delta_1", "delta_2", "delta_3"]
    mean = {k: float(np.mean([getattr(r, k) for _, r in rows])) for k in keys}
    payload = {"frames": {str(i): r.to_dict() for i, r in rows}, "mean": mean}
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "depth_report.json").write_text(text + "\n")
        with open(out / "depth_report.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame"] + keys)
            for i, r in rows:
                w.writerow([i] + [f"{getattr(r, k):.6f}" for k in keys])
            w.writerow(["mean"] + [f"{mean[k]:.6f}" for k in keys])
    return EXIT_OK


def cmd_inspect_cv(args) -> int:
    try:
        r, c = (int(x) for x in args.pixel.split(","))
    except ValueError:
        print(f"--pixel must be row,col, got {args.pixel!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rows = pipeline.inspect_cv(args.cv, (r, c))
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    n_channels = len(rows[0]["channels"])
    header = ["plane", "depth"] + [f"ch{i}" for i in range(n_channels)] + ["valid"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            [str(row["plane"]), f"{row['depth']:.6f}"]
            + [f"{x:.6f}" for x in row["channels"]]
            + ["1" if row["valid"] else "0"]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_mesh(args) -> int:
    vol = containers.load_tsdf(args.tsdf)
    mesh = marching_cubes(vol, iso=args.iso)
    out = Path(args.out)
    if out.suffix == ".obj":
        save_obj(out, mesh)
    else:
        save_ply(out, mesh, binary=not args.ascii)
    print(f"wrote {mesh.num_vertices} vertices / {mesh.num_triangles} triangles")
    return EXIT_OK


def cmd_render_depth(args) -> int:
    mesh = load_ply(args.mesh)
    cam = Camera(load_intrinsics(args.intrinsics), load_pose(args.pose))
    depth = render_depth(mesh, cam)
    from .dataset import write_depth_png
    write_depth_png(args.out, depth.values)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, IndexError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
