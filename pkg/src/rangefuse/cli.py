"""Command-line entry points for projection, fusion, evaluation, and robustness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import degradations, tensorio
from .boxlabels import DEFAULT_CLASS_MAP, generate_panoptic, load_class_map
from .config import PipelineConfig, load_config
from .harness import (
    bench,
    run_domain_shift_eval,
    run_drift_eval,
    run_dropout_eval,
    train_scene_head,
    write_drift_curve_csv,
    write_per_class_csv,
    write_report_json,
)
from .pipeline import CAMERA_MODES, decoder_loss_on_result, run_pipeline, scene_rig
from .rangeview import FOV_PRESETS, rasterize
from .synthetic import (
    night_reference_pool,
    terrain_scene,
    uncertainty_pairs,
)
from .uncertainty import init_params, load_checkpoint, save_checkpoint, train_step
from .viewtransform import build_cam_to_rv_map


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


def _demo_scene(config: PipelineConfig):
    return terrain_scene(config.seeds.scene)


def _cloud_from_args(args, config: PipelineConfig):
    if args.cloud:
        from .rangeview import PointCloud

        return PointCloud(tensorio.read_point_cloud(args.cloud))
    return _demo_scene(config).cloud


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def cmd_project(args) -> int:
    config = _load_config(args)
    cloud = _cloud_from_args(args, config)
    fov = FOV_PRESETS[config.fov_preset]
    rv, mapping = rasterize(cloud, fov, config.rv_height, config.rv_width)
    tensors = {
        "channels": rv.channels,
        "valid": rv.valid.astype(np.uint8),
        "rows": mapping.rows,
        "cols": mapping.cols,
        "in_fov": mapping.in_fov.astype(np.uint8),
        "ranges": mapping.ranges,
    }
    meta = {"height": config.rv_height, "width": config.rv_width, "fov": config.fov_preset}
    tensorio.write_tensor_dir(args.out, tensors, meta=meta)
    print(f"projected {len(cloud)} points; {int(rv.valid.sum())} valid pixels -> {args.out}")
    return 0


def cmd_viewmap(args) -> int:
    config = _load_config(args)
    cloud = _cloud_from_args(args, config)
    rig = scene_rig(config)
    fov = FOV_PRESETS[config.fov_preset]
    cam_map = build_cam_to_rv_map(rig, cloud, fov, config.rv_height, config.rv_width)
    tensors = {}
    mapped = 0
    for i, (rows, cols) in enumerate(zip(cam_map.rv_rows, cam_map.rv_cols)):
        tensors[f"cam{i}_rows"] = rows
        tensors[f"cam{i}_cols"] = cols
        mapped += int((rows >= 0).sum())
    meta = {"cameras": len(rig), "rv_height": cam_map.rv_height, "rv_width": cam_map.rv_width}
    tensorio.write_tensor_dir(args.out, tensors, meta=meta)
    print(f"mapped {mapped} camera pixels across {len(rig)} cameras -> {args.out}")
    return 0


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_augment(args) -> int:
    if args.list:
        for kind in degradations.KINDS:
            print(kind)
        return 0
    if not args.image or not args.out or not args.kind:
        raise ValueError("augment needs --image, --out, and --kind (or --list)")
    image = tensorio.read_image(args.image)
    params = _parse_params(args.param)
    if args.reference:
        params["reference"] = tensorio.read_image(args.reference)
    spec = degradations.DegradationSpec(args.kind, params, seed=args.seed)
    tensorio.write_image(args.out, degradations.apply(image, spec))
    print(f"{args.kind} -> {args.out}")
    return 0


def cmd_train_uncertainty(args) -> int:
    config = _load_config(args)
    steps = args.steps or config.train_steps
    stride = config.scales[0]
    if args.scene:
        heads = train_scene_head(config, night_reference_pool())
        save_checkpoint(args.out, heads)
        print(f"scene-pair head ({config.train_steps} steps) -> {args.out}")
        return 0
    feats, targets, _ = uncertainty_pairs(
        args.samples, dim=config.feature_dim, seed=config.seeds.training
    )
    params = init_params(config.feature_dim, seed=config.seeds.training)
    loss = float("nan")
    for _ in range(steps):
        params, loss = train_step(params, feats, targets, lr=config.learning_rate)
    save_checkpoint(args.out, {stride: params})
    print(f"trained {steps} steps, final loss {loss:.6f} -> {args.out}")
    return 0


def _heads_from_args(args):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    return None


def cmd_fuse(args) -> int:
    config = _load_config(args)
    pool = night_reference_pool() if args.mode == "domain_shift" else None
    result = run_pipeline(
        config, camera_mode=args.mode, heads=_heads_from_args(args), reference_pool=pool
    )
    tensors = {
        "f_lidar": result.f_lidar,
        "f_camera": result.f_camera,
        "covered": result.covered.astype(np.uint8),
        "uncertainty": result.uncertainty,
        "fused": result.fused,
    }
    meta = {"mode": args.mode, "mean_uncertainty": result.mean_uncertainty}
    tensorio.write_tensor_dir(args.out, tensors, meta=meta)
    print(f"{args.mode}: mean U {result.mean_uncertainty:.4f} -> {args.out}")
    return 0


def cmd_eval_loss(args) -> int:
    config = _load_config(args)
    result = run_pipeline(config, camera_mode=args.mode, heads=_heads_from_args(args))
    total, parts = decoder_loss_on_result(
        result,
        config.loss_weights,
        config.sample_points,
        config.importance_ratio,
        seed=config.seeds.training,
    )
    _print_json({"total": total, **parts})
    return 0


def cmd_eval_pq(args) -> int:
    config = _load_config(args)
    pool = night_reference_pool() if args.mode == "domain_shift" else None
    result = run_pipeline(
        config, camera_mode=args.mode, heads=_heads_from_args(args), reference_pool=pool
    )
    payload = result.report.as_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _print_json(payload["aggregates"])
    return 0


def cmd_gen_labels(args) -> int:
    config = _load_config(args)
    class_map = load_class_map(args.class_map) if args.class_map else DEFAULT_CLASS_MAP
    if args.cloud or args.boxes or args.semantics:
        if not (args.cloud and args.boxes and args.semantics):
            raise ValueError("gen-labels needs --cloud, --boxes, and --semantics together")
        from .rangeview import PointCloud

        cloud = PointCloud(tensorio.read_point_cloud(args.cloud))
        semantics, _ = tensorio.read_labels(args.semantics)
        boxes = tensorio.read_boxes_jsonl(args.boxes)
    else:
        scene = _demo_scene(config)
        cloud, semantics, boxes = scene.cloud, scene.semantics, scene.boxes
    label = generate_panoptic(
        cloud, semantics, boxes, class_map, min_points=config.min_points
    )
    tensorio.write_labels(args.out, label.semantic, label.instance)
    n_inst = len(np.unique(label.instance[label.instance > 0]))
    print(f"{len(label)} points, {n_inst} instances -> {args.out}")
    return 0


def cmd_robustness(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiment == "dropout":
        report = run_dropout_eval(
            config,
            heads=_heads_from_args(args),
            force_full_uncertainty=args.force_full_uncertainty,
        )
    elif args.experiment == "drift":
        angles = [float(a) for a in args.angles.split(",")]
        report = run_drift_eval(config, angles)
    else:
        pool = _pool_from_args(args)
        report = run_domain_shift_eval(config, pool, heads=_heads_from_args(args))
    write_report_json(report, out / "report.json")
    write_per_class_csv(report, out / "per_class.csv")
    if report.kind == "drift":
        write_drift_curve_csv(report, out / "drift_curve.csv")
    for cond in report.conditions:
        print(
            f"{cond.name}: PQ {cond.metrics.pq:.4f} dPQ {cond.delta_pq:+.4f} "
            f"meanU {cond.mean_uncertainty:.4f}"
        )
    print(f"report -> {out}")
    return 0


def _pool_from_args(args) -> list[np.ndarray]:
    if not args.pool:
        return night_reference_pool()
    pool_dir = Path(args.pool)
    paths = sorted(
        p for p in pool_dir.iterdir() if p.suffix.lower() in (".ppm", ".png")
    )
    if not paths:
        raise ValueError(f"no .ppm/.png images in {pool_dir}")
    return [tensorio.read_image(p) for p in paths]


def cmd_bench(args) -> int:
    config = _load_config(args)
    _print_json(bench(config))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangefuse",
        description="Range-view LiDAR-camera fusion: projection, fusion, metrics, robustness.",
    )
    parser.add_argument("--config", help="TOML or JSON pipeline configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="rasterize a point cloud into a range view")
    p.add_argument("--cloud", help="raw float32 (x, y, z, intensity) records")
    p.add_argument("--out", required=True, help="output tensor directory")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("viewmap", help="build the camera-to-range-view mapping")
    p.add_argument("--cloud", help="raw float32 cloud; defaults to the demo scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viewmap)

    p = sub.add_parser("augment", help="apply an image degradation")
    p.add_argument("--image")
    p.add_argument("--out")
    p.add_argument("--kind")
    p.add_argument("--param", action="append", default=[], help="key=value, repeatable")
    p.add_argument("--reference", help="reference image for histogram matching")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--list", action="store_true", help="list catalog kinds and exit")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-uncertainty", help="train the degradation-regression head")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--samples", type=int, default=2000, help="synthetic pair count")
    p.add_argument(
        "--scene", action="store_true", help="train on scene warp pairs instead"
    )
    p.set_defaults(func=cmd_train_uncertainty)

    p = sub.add_parser("fuse", help="run the pipeline and dump the fused feature grids")
    p.add_argument("--mode", choices=CAMERA_MODES, default="clean")
    p.add_argument("--checkpoint", help="uncertainty head checkpoint directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval-loss", help="set-matched panoptic loss on the demo scene")
    p.add_argument("--mode", choices=CAMERA_MODES, default="clean")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval_loss)

    p = sub.add_parser("eval-pq", help="panoptic quality of one pipeline condition")
    p.add_argument("--mode", choices=CAMERA_MODES, default="clean")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="write the full per-class report as JSON")
    p.set_defaults(func=cmd_eval_pq)

    p = sub.add_parser("gen-labels", help="panoptic labels from boxes and semantics")
    p.add_argument("--cloud")
    p.add_argument("--boxes", help="JSONL box records")
    p.add_argument("--semantics", help="packed u32 label file (instance bits ignored)")
    p.add_argument("--class-map", help="JSON box-class to semantic-classes map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_labels)

    p = sub.add_parser("robustness", help="run a robustness experiment")
    p.add_argument("experiment", choices=("dropout", "drift", "domain"))
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--checkpoint")
    p.add_argument("--angles", default="0,1,2,3,4,5", help="drift angles, comma separated")
    p.add_argument(
        "--force-full-uncertainty",
        action="store_true",
        help="pin U to 1 in the dropout condition (graceful-degradation check)",
    )
    p.add_argument("--pool", help="directory of reference images for domain shift")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("bench", help="coarse stage timings for the demo scene")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
