"""End-to-end synthetic pipeline: scene through fusion to panoptic metrics.

One run covers project -> view transform -> (degrade) -> uncertainty ->
fusion -> point features -> heads -> inference -> scoring.  Conditions vary
the camera input (clean, zeroed, domain-shifted) and the assumed extrinsics
(calibration drift); everything is seed-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import degradations
from .boxlabels import generate_panoptic
from .config import PipelineConfig
from .decoder import (
    LossWeights,
    hungarian,
    mask_embed,
    mask_logits,
    match_costs,
    panoptic_loss,
    point_features,
    sample_points,
)
from .fusion import DeformableParams, fused_features, init_deformable, load_deformable
from .panoptic import ClassSplit, MetricReport, PanopticLabel, panoptic_inference, pq_metrics
from .rangeview import FOV_PRESETS, rasterize
from .synthetic import (
    SyntheticScene,
    averaging_mlp2,
    camera_feature_maps,
    demo_rig,
    identity_mask_embed,
    lidar_feature_grid,
    prototype_queries,
    render_views,
    synthetic_class_split,
    terrain_scene,
)
from .uncertainty import MlpParams, mlp_forward, uncertainty_score
from .viewtransform import CameraModel, build_cam_to_rv_map, load_camera_rig, warp_features

CAMERA_MODES = ("clean", "dropout", "uninformative", "domain_shift")


@dataclass
class PipelineResult:
    """Everything one condition run produced, arrays included."""

    scene: SyntheticScene
    gt: PanopticLabel
    pred: PanopticLabel
    report: MetricReport
    split: ClassSplit
    f_lidar: np.ndarray
    f_camera: np.ndarray
    covered: np.ndarray
    uncertainty: np.ndarray
    fused: np.ndarray
    mean_uncertainty: float
    images: list = field(repr=False, default_factory=list)
    decoded: np.ndarray | None = None
    m3d: np.ndarray | None = None
    class_logits: np.ndarray | None = None


def scene_rig(config: PipelineConfig) -> list[CameraModel]:
    if config.camera_rig is not None:
        return load_camera_rig(config.camera_rig)
    return demo_rig()


def prepare_images(
    scene: SyntheticScene,
    rig: list[CameraModel],
    camera_mode: str,
    reference_pool=None,
    seed: int = 0,
) -> list[np.ndarray]:
    """Render the rig's views and apply the condition's camera degradation."""
    if camera_mode not in CAMERA_MODES:
        raise ValueError(f"camera_mode must be one of {CAMERA_MODES}")
    images = render_views(scene, rig)
    if camera_mode in ("dropout", "uninformative"):
        return [np.zeros_like(img) for img in images]
    if camera_mode == "domain_shift":
        if not reference_pool:
            raise ValueError("domain shift needs a nonempty reference pool")
        out = []
        for i, img in enumerate(images):
            ref = reference_pool[i % len(reference_pool)]
            spec = degradations.DegradationSpec(
                "histogram_match", {"reference": ref}, seed=seed + i
            )
            out.append(degradations.apply(img, spec))
        return out
    return images


def camera_uncertainty(
    f_camera: np.ndarray,
    covered: np.ndarray,
    head: MlpParams | None,
    force: float | None = None,
) -> np.ndarray:
    """Per-cell fusion uncertainty in [0, 1]; uncovered cells get full 1."""
    if force is not None:
        return np.full(covered.shape, float(force))
    u = np.ones(covered.shape)
    if head is not None and np.any(covered):
        d_pred = mlp_forward(head, f_camera[covered])
        u[covered] = uncertainty_score(d_pred)
    elif np.any(covered):
        u[covered] = 0.0  # no trained head: trust covered camera cells
    return u


def run_pipeline(
    config: PipelineConfig,
    camera_mode: str = "clean",
    rig: list[CameraModel] | None = None,
    drift_rig: list[CameraModel] | None = None,
    reference_pool=None,
    heads: dict[int, MlpParams] | None = None,
    fusion_params: DeformableParams | None = None,
    force_uncertainty: float | None = None,
) -> PipelineResult:
    """Run one condition end to end on the procedural scene.

    ``rig`` renders the images (physical truth); ``drift_rig``, when given,
    is the miscalibrated rig the view transform believes in.
    """
    stride = config.scales[0]
    dim = config.feature_dim
    fov = FOV_PRESETS[config.fov_preset]
    split = synthetic_class_split(config.min_points)

    scene = terrain_scene(config.seeds.scene)
    rv, mapping = rasterize(scene.cloud, fov, config.rv_height, config.rv_width)
    gt = generate_panoptic(
        scene.cloud, scene.semantics, scene.boxes, min_points=config.min_points
    )

    if rig is None:
        rig = scene_rig(config)
    assumed = drift_rig if drift_rig is not None else rig
    images = prepare_images(
        scene, rig, camera_mode, reference_pool, seed=config.seeds.degradations
    )

    cam_map = build_cam_to_rv_map(
        assumed, scene.cloud, fov, config.rv_height, config.rv_width
    )
    f_lidar = lidar_feature_grid(rv, stride, dim, config.seeds.features)
    cam_feats = camera_feature_maps(images, dim, stride, config.seeds.features + 1)
    f_camera, covered = warp_features(cam_feats, cam_map, stride)

    head = None if heads is None else heads.get(stride)
    uncertainty = camera_uncertainty(f_camera, covered, head, force_uncertainty)
    if fusion_params is None:
        if config.fusion_checkpoint is not None:
            fusion_params = load_deformable(config.fusion_checkpoint)[stride]
        else:
            fusion_params = init_deformable(dim)
    fused = fused_features(f_lidar, f_camera, uncertainty, fusion_params, covered)

    decoded = np.flatnonzero(mapping.in_fov)
    ranges = rv.channels[:, :, 0]
    pts_rc = np.c_[mapping.rows[decoded], mapping.cols[decoded]]
    r_true = mapping.ranges[decoded]
    f_point = point_features(
        fused, ranges, rv.valid, pts_rc, r_true, averaging_mlp2(5, dim)
    )

    class_logits, queries = prototype_queries(
        f_point, gt, split, decoded, seed=config.seeds.harness
    )
    e_mask = mask_embed(queries, identity_mask_embed(dim))
    m3d = mask_logits(e_mask, f_point)

    pred = PanopticLabel(
        np.zeros(len(scene), dtype=np.int64), np.zeros(len(scene), dtype=np.int64)
    )
    if class_logits.shape[0]:
        decoded_pred = panoptic_inference(
            class_logits, m3d, split, threshold=config.confidence_threshold
        )
        sem = pred.semantic.copy()
        inst = pred.instance.copy()
        sem[decoded] = decoded_pred.semantic
        inst[decoded] = decoded_pred.instance
        pred = PanopticLabel(sem, inst)

    report = pq_metrics(pred, gt, split)
    mean_u = float(uncertainty[covered].mean()) if np.any(covered) else 1.0
    return PipelineResult(
        scene=scene,
        gt=gt,
        pred=pred,
        report=report,
        split=split,
        f_lidar=f_lidar,
        f_camera=f_camera,
        covered=covered,
        uncertainty=uncertainty,
        fused=fused,
        mean_uncertainty=mean_u,
        images=images,
        decoded=decoded,
        m3d=m3d,
        class_logits=class_logits,
    )


def decoder_loss_on_result(
    result: PipelineResult,
    weights: LossWeights,
    n_sample: int,
    importance_ratio: float,
    seed: int = 0,
) -> tuple[float, dict[str, float]]:
    """Set-matched panoptic loss of a pipeline run against its ground truth."""
    decoded = result.decoded
    sem = result.gt.semantic[decoded]
    inst = result.gt.instance[decoded]
    split = result.split
    gt_classes = []
    gt_masks = []
    for c in sorted(split.known):
        if c in split.stuff:
            mask = sem == c
            if mask.any():
                gt_classes.append(c)
                gt_masks.append(mask)
        else:
            for i in np.unique(inst[(sem == c) & (inst > 0)]):
                gt_classes.append(c)
                gt_masks.append((sem == c) & (inst == i))
    class_ids = sorted(split.known)
    col = {c: i for i, c in enumerate(class_ids)}
    gt_cols = np.array([col[c] for c in gt_classes], dtype=np.int64)
    gt_masks = np.asarray(gt_masks, dtype=np.float64).reshape(len(gt_classes), -1)

    rng = np.random.default_rng(seed)
    n_sample = min(n_sample, result.m3d.shape[1])
    idx = sample_points(result.m3d, n_sample, importance_ratio, rng)
    m3d_s = result.m3d[:, idx]
    masks_s = gt_masks[:, idx]
    costs = match_costs(result.class_logits, m3d_s, gt_cols, masks_s, weights)
    match = hungarian(costs)
    return panoptic_loss(result.class_logits, m3d_s, gt_cols, masks_s, match, weights)
