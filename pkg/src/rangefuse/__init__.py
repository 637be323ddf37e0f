"""Range-view LiDAR-camera fusion toolkit.

Submodules cover the spherical range-view projection (``rangeview``), the
camera-to-range-view transform (``viewtransform``), the image degradation
catalog (``degradations``), degradation-driven uncertainty (``uncertainty``),
uncertainty-guided deformable fusion (``fusion``), the 3D-aware mask decoder
(``decoder``), panoptic inference and metrics (``panoptic``), box-derived
labels (``boxlabels``), and the robustness harness (``harness``) with its CLI
(``cli``).
"""

from .boxlabels import (
    BOX_CLASSES,
    DEFAULT_CLASS_MAP,
    SEMANTIC_CLASSES,
    THING_CLASSES,
    Box3D,
    generate_panoptic,
    points_in_box,
)
from .config import PipelineConfig, Seeds, load_config, save_config, worker_count
from .decoder import (
    LOSS_WEIGHT_PRESETS,
    LossWeights,
    MatchResult,
    hungarian,
    match_costs,
    panoptic_loss,
    point_features,
    sample_points,
    select_3d_neighbors,
)
from .degradations import DegradationSpec, apply, sample_spec, severity_sweep
from .fusion import (
    DeformableParams,
    deformable_attend,
    fused_features,
    init_deformable,
    modulate,
)
from .harness import (
    ConditionResult,
    RobustnessReport,
    bench,
    perturb_extrinsics,
    rotation_angle_deg,
    run_domain_shift_eval,
    run_drift_eval,
    run_dropout_eval,
)
from .panoptic import (
    ClassSplit,
    MetricReport,
    PanopticLabel,
    merge_stats,
    min_points_filter,
    panoptic_inference,
    pq_metrics,
)
from .pipeline import PipelineResult, run_pipeline
from .rangeview import FOV_PRESETS, FovConfig, PointCloud, RangeImage, RvMapping, rasterize
from .synthetic import SyntheticScene, demo_rig, render_views, terrain_scene
from .uncertainty import MlpParams, huber, mlp_forward, train_step, uncertainty_score
from .viewtransform import (
    CameraModel,
    CamToRvMap,
    build_cam_to_rv_map,
    densify_depth,
    warp_features,
)

__version__ = "0.1.0"

__all__ = [
    "BOX_CLASSES",
    "DEFAULT_CLASS_MAP",
    "FOV_PRESETS",
    "LOSS_WEIGHT_PRESETS",
    "SEMANTIC_CLASSES",
    "THING_CLASSES",
    "Box3D",
    "CamToRvMap",
    "CameraModel",
    "ClassSplit",
    "ConditionResult",
    "DeformableParams",
    "DegradationSpec",
    "FovConfig",
    "LossWeights",
    "MatchResult",
    "MetricReport",
    "MlpParams",
    "PanopticLabel",
    "PipelineConfig",
    "PipelineResult",
    "PointCloud",
    "RangeImage",
    "RobustnessReport",
    "RvMapping",
    "Seeds",
    "SyntheticScene",
    "apply",
    "bench",
    "build_cam_to_rv_map",
    "deformable_attend",
    "demo_rig",
    "densify_depth",
    "fused_features",
    "generate_panoptic",
    "huber",
    "hungarian",
    "init_deformable",
    "load_config",
    "match_costs",
    "merge_stats",
    "min_points_filter",
    "mlp_forward",
    "modulate",
    "panoptic_inference",
    "panoptic_loss",
    "perturb_extrinsics",
    "point_features",
    "points_in_box",
    "pq_metrics",
    "rasterize",
    "render_views",
    "rotation_angle_deg",
    "run_domain_shift_eval",
    "run_drift_eval",
    "run_dropout_eval",
    "run_pipeline",
    "sample_points",
    "sample_spec",
    "save_config",
    "select_3d_neighbors",
    "severity_sweep",
    "terrain_scene",
    "train_step",
    "uncertainty_score",
    "warp_features",
]
