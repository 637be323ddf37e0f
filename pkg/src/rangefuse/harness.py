"""Robustness experiment drivers: camera dropout, calibration drift, domain shift.

Each driver runs the synthetic pipeline under a clean condition plus one or
more degraded conditions and packages the metric deltas into a report that
serializes byte-identically under fixed seeds (JSON aggregate + per-class CSV).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import degradations
from .config import SCHEMA_VERSION, PipelineConfig, worker_count
from .panoptic import MetricReport
from .pipeline import prepare_images, run_pipeline, scene_rig
from .rangeview import FOV_PRESETS, rasterize
from .synthetic import camera_feature_maps, terrain_scene
from .uncertainty import MlpParams, init_params, masked_training_pairs, train_step
from .viewtransform import CameraModel, build_cam_to_rv_map, warp_features

REPORT_KINDS = ("dropout", "drift", "domain_shift")


def _random_unit_axis(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def rotation_about(axis: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rodrigues rotation matrix for an angle in degrees about a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    theta = np.deg2rad(theta_deg)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def perturb_extrinsics(
    transform: np.ndarray,
    theta_deg: float,
    rng: np.random.Generator,
    axis: np.ndarray | None = None,
) -> np.ndarray:
    """Right-multiply the rotation block by a theta-degree rotation.

    The axis is drawn uniformly from the sphere unless given; the
    translation column is untouched, so the result stays rigid.
    """
    transform = np.asarray(transform, dtype=np.float64)
    if transform.shape != (4, 4):
        raise ValueError("extrinsics must be a 4x4 matrix")
    if theta_deg < 0:
        raise ValueError("perturbation angle must be nonnegative")
    if axis is None:
        axis = _random_unit_axis(rng)
    out = transform.copy()
    out[:3, :3] = transform[:3, :3] @ rotation_about(axis, theta_deg)
    return out


def rotation_angle_deg(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic angle in degrees between two rotation matrices."""
    rel = np.asarray(rot_a).T @ np.asarray(rot_b)
    cos = (np.trace(rel) - 1.0) / 2.0
    return float(np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0))))


@dataclass(frozen=True)
class ConditionResult:
    """Metrics for one evaluated condition, baselined against the clean run."""

    name: str
    metrics: MetricReport
    delta_pq: float
    mean_uncertainty: float
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RobustnessReport:
    kind: str
    conditions: tuple[ConditionResult, ...]
    metadata: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in REPORT_KINDS:
            raise ValueError(f"kind must be one of {REPORT_KINDS}")
        if not self.conditions or self.conditions[0].name != "clean":
            raise ValueError("conditions must start with the clean baseline")
        clean_pq = self.conditions[0].metrics.pq
        for cond in self.conditions:
            if cond.delta_pq != cond.metrics.pq - clean_pq:
                raise ValueError(f"delta_pq of {cond.name} is not PQ - PQ_clean")


def _condition(name: str, result, clean_pq: float, **details) -> ConditionResult:
    return ConditionResult(
        name=name,
        metrics=result.report,
        delta_pq=result.report.pq - clean_pq,
        mean_uncertainty=result.mean_uncertainty,
        details=details,
    )


# ---------------------------------------------------------------------------
# Camera dropout.


def run_dropout_eval(
    config: PipelineConfig,
    heads: dict[int, MlpParams] | None = None,
    force_full_uncertainty: bool = False,
) -> RobustnessReport:
    """Clean fusion vs fusion with all camera images zeroed.

    With ``force_full_uncertainty`` the dropout run pins U to 1 everywhere,
    which must collapse the fused features onto the LiDAR-only features
    bit-for-bit; the outcome is recorded in the condition details.
    """
    clean = run_pipeline(config, camera_mode="clean", heads=heads)
    drop = run_pipeline(
        config,
        camera_mode="dropout",
        heads=heads,
        force_uncertainty=1.0 if force_full_uncertainty else None,
    )
    details = {}
    if force_full_uncertainty:
        details["fused_bit_equals_lidar"] = bool(np.array_equal(drop.fused, drop.f_lidar))
    conditions = (
        _condition("clean", clean, clean.report.pq),
        _condition("dropout", drop, clean.report.pq, **details),
    )
    metadata = {
        "force_full_uncertainty": force_full_uncertainty,
        "trained_heads": heads is not None,
        "seeds": vars(config.seeds).copy(),
    }
    return RobustnessReport(kind="dropout", conditions=conditions, metadata=metadata)


# ---------------------------------------------------------------------------
# Calibration drift.


def _drift_rig(rig: list[CameraModel], axes: list[np.ndarray], angle: float) -> list[CameraModel]:
    dummy = np.random.default_rng(0)
    return [
        CameraModel(
            intrinsics=cam.intrinsics,
            extrinsics=perturb_extrinsics(cam.extrinsics, angle, dummy, axis=axis),
            size=cam.size,
        )
        for cam, axis in zip(rig, axes)
    ]


def mean_map_displacement(base, drifted) -> float:
    """Mean RV-pixel distance between two mappings over jointly mapped pixels."""
    dists = []
    for b_r, b_c, d_r, d_c in zip(base.rv_rows, base.rv_cols, drifted.rv_rows, drifted.rv_cols):
        both = (b_r >= 0) & (d_r >= 0)
        if np.any(both):
            dists.append(np.hypot(d_r[both] - b_r[both], d_c[both] - b_c[both]))
    if not dists:
        return 0.0
    return float(np.concatenate(dists).mean())


def run_drift_eval(config: PipelineConfig, angles: list[float]) -> RobustnessReport:
    """Sweep rotational extrinsics error; report PQ and mapping displacement.

    Each camera gets one independent random axis (drawn from the harness
    seed) that is reused across the whole angle sweep, so displacement grows
    monotonically with the angle.
    """
    angles = [float(a) for a in angles]
    if not angles or angles[0] != 0.0:
        raise ValueError("angle list must start at 0")
    if any(b < a for a, b in zip(angles, angles[1:])):
        raise ValueError("angles must be sorted ascending")

    rig = scene_rig(config)
    rng = np.random.default_rng(config.seeds.harness)
    axes = [_random_unit_axis(rng) for _ in rig]
    scene = terrain_scene(config.seeds.scene)
    fov = FOV_PRESETS[config.fov_preset]
    base_map = build_cam_to_rv_map(rig, scene.cloud, fov, config.rv_height, config.rv_width)

    def evaluate(angle: float):
        drifted = _drift_rig(rig, axes, angle)
        result = run_pipeline(config, camera_mode="clean", rig=rig, drift_rig=drifted)
        drift_map = build_cam_to_rv_map(
            drifted, scene.cloud, fov, config.rv_height, config.rv_width
        )
        return result, mean_map_displacement(base_map, drift_map)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        evaluated = list(pool.map(evaluate, angles))

    clean_pq = evaluated[0][0].report.pq
    conditions = []
    for angle, (result, displacement) in zip(angles, evaluated):
        name = "clean" if angle == 0.0 else f"drift_{angle:g}deg"
        conditions.append(
            _condition(
                name,
                result,
                clean_pq,
                angle_deg=angle,
                mean_displacement_px=displacement,
            )
        )
    metadata = {
        "axis_policy": "independent random axis per camera, shared across angles",
        "angles_deg": angles,
        "seeds": vars(config.seeds).copy(),
    }
    return RobustnessReport(kind="drift", conditions=tuple(conditions), metadata=metadata)


# ---------------------------------------------------------------------------
# Domain shift.


def train_scene_head(
    config: PipelineConfig,
    reference_pool: list[np.ndarray],
    n_sampled_specs: int = 6,
) -> dict[int, MlpParams]:
    """Desk-scale uncertainty head trained on this scene's degradation pairs.

    Pairs come from warping clean vs degraded camera features through the
    same mapping; the degradation set always contains the identity, one
    histogram match per pool image, and a few sampled catalog entries.
    """
    if not reference_pool:
        raise ValueError("reference pool must be nonempty")
    scene = terrain_scene(config.seeds.scene)
    rig = scene_rig(config)
    fov = FOV_PRESETS[config.fov_preset]
    stride = config.scales[0]
    dim = config.feature_dim
    cam_map = build_cam_to_rv_map(rig, scene.cloud, fov, config.rv_height, config.rv_width)
    images = prepare_images(scene, rig, "clean")

    def warped(image_list):
        feats = camera_feature_maps(image_list, dim, stride, config.seeds.features + 1)
        return warp_features(feats, cam_map, stride)

    f_orig, covered = warped(images)

    specs = [None]
    for i, ref in enumerate(reference_pool):
        specs.append(
            degradations.DegradationSpec(
                "histogram_match", {"reference": ref}, seed=config.seeds.degradations + i
            )
        )
    rng = np.random.default_rng(config.seeds.degradations)
    for _ in range(n_sampled_specs):
        specs.append(degradations.sample_spec(rng, reference_pool))

    feats, targets = [], []
    for spec in specs:
        degraded = [degradations.apply(img, spec) for img in images]
        f_aug, _ = warped(degraded)
        f, d = masked_training_pairs(f_orig, f_aug, covered)
        feats.append(f)
        targets.append(d)
    feats = np.concatenate(feats, axis=0)
    targets = np.concatenate(targets, axis=0)

    params = init_params(dim, seed=config.seeds.training)
    for _ in range(config.train_steps):
        params, _ = train_step(params, feats, targets, lr=config.learning_rate)
    return {stride: params}


def run_domain_shift_eval(
    config: PipelineConfig,
    reference_pool: list[np.ndarray],
    heads: dict[int, MlpParams] | None = None,
) -> RobustnessReport:
    """Clean vs histogram-matched camera input, scored with a trained head."""
    if not reference_pool:
        raise ValueError("reference pool must be nonempty")
    if heads is None:
        heads = train_scene_head(config, reference_pool)
    clean = run_pipeline(config, camera_mode="clean", heads=heads)
    shifted = run_pipeline(
        config, camera_mode="domain_shift", reference_pool=reference_pool, heads=heads
    )
    conditions = (
        _condition("clean", clean, clean.report.pq),
        _condition(
            "domain_shift",
            shifted,
            clean.report.pq,
            mean_uncertainty_delta=shifted.mean_uncertainty - clean.mean_uncertainty,
        ),
    )
    metadata = {
        "pool_size": len(reference_pool),
        "train_steps": config.train_steps,
        "seeds": vars(config.seeds).copy(),
    }
    return RobustnessReport(kind="domain_shift", conditions=conditions, metadata=metadata)


# ---------------------------------------------------------------------------
# Serialization.  repr() of floats round-trips exactly, keeping files
# byte-identical across runs with equal inputs.


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def report_to_dict(report: RobustnessReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "kind": report.kind,
        "metadata": report.metadata,
        "conditions": [
            {
                "name": c.name,
                "delta_pq": c.delta_pq,
                "mean_uncertainty": c.mean_uncertainty,
                "details": c.details,
                "aggregates": c.metrics.as_dict()["aggregates"],
            }
            for c in report.conditions
        ],
    }


def write_report_json(report: RobustnessReport, path) -> None:
    text = json.dumps(report_to_dict(report), indent=2, sort_keys=True, default=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


CSV_COLUMNS = (
    "condition",
    "class",
    "role",
    "tp",
    "fp",
    "fn",
    "iou_sum",
    "stuff_iou_sum",
    "stuff_pairs",
    "pq",
    "sq",
    "rq",
)


def write_per_class_csv(report: RobustnessReport, path) -> None:
    """Raw per-class accumulators; every aggregate is re-derivable from these."""
    lines = [",".join(CSV_COLUMNS)]
    for cond in report.conditions:
        split = cond.metrics.split
        for cls in sorted(cond.metrics.per_class):
            s = cond.metrics.per_class[cls]
            role = "stuff" if cls in split.stuff else "thing"
            lines.append(
                ",".join(
                    [
                        cond.name,
                        str(cls),
                        role,
                        str(s.tp),
                        str(s.fp),
                        str(s.fn),
                        _num(s.iou_sum),
                        _num(s.stuff_iou_sum),
                        str(s.stuff_pairs),
                        _num(s.pq),
                        _num(s.sq),
                        _num(s.rq),
                    ]
                )
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_drift_curve_csv(report: RobustnessReport, path) -> None:
    if report.kind != "drift":
        raise ValueError("drift curve requires a drift report")
    lines = ["angle_deg,pq,mean_displacement_px"]
    for cond in report.conditions:
        lines.append(
            ",".join(
                [
                    _num(cond.details["angle_deg"]),
                    _num(cond.metrics.pq),
                    _num(cond.details["mean_displacement_px"]),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Benchmark.  Wall-clock figures vary run to run; only the key set is stable.


def bench(config: PipelineConfig) -> dict[str, float]:
    """Coarse stage timings in seconds for the default synthetic scene."""
    timings = {}

    start = time.perf_counter()
    scene = terrain_scene(config.seeds.scene)
    rig = scene_rig(config)
    timings["scene"] = time.perf_counter() - start

    fov = FOV_PRESETS[config.fov_preset]
    start = time.perf_counter()
    rasterize(scene.cloud, fov, config.rv_height, config.rv_width)
    timings["project"] = time.perf_counter() - start

    start = time.perf_counter()
    build_cam_to_rv_map(rig, scene.cloud, fov, config.rv_height, config.rv_width)
    timings["viewmap"] = time.perf_counter() - start

    start = time.perf_counter()
    run_pipeline(config, camera_mode="clean")
    timings["pipeline_clean"] = time.perf_counter() - start

    timings["workers"] = float(worker_count())
    return timings
