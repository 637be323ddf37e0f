"""Pipeline configuration: one TOML or JSON document, explicit seeds.

Paths are resolved relative to the config file and must exist at load time;
nothing is ever seeded from the wall clock.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .decoder import LOSS_WEIGHT_PRESETS, LossWeights
from .rangeview import FOV_PRESETS

SCHEMA_VERSION = 1
THREADS_ENV = "RANGEFUSE_THREADS"


def worker_count() -> int:
    """Worker cap from RANGEFUSE_THREADS; defaults to a single worker."""
    raw = os.environ.get(THREADS_ENV, "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


@dataclass(frozen=True)
class Seeds:
    scene: int = 7
    degradations: int = 11
    training: int = 13
    harness: int = 17
    features: int = 23


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a harness run needs, resolved and validated."""

    fov_preset: str = "nuscenes"
    rv_height: int = 64
    rv_width: int = 512
    scales: tuple[int, ...] = (4,)
    feature_dim: int = 16
    loss_preset: str = "nuscenes"
    sample_points: int = 512
    importance_ratio: float = 0.75
    min_points: int = 10
    confidence_threshold: float = 0.25
    train_steps: int = 300
    learning_rate: float = 0.05
    seeds: Seeds = field(default_factory=Seeds)
    camera_rig: Path | None = None
    uncertainty_checkpoint: Path | None = None
    fusion_checkpoint: Path | None = None

    def __post_init__(self):
        if self.fov_preset not in FOV_PRESETS:
            raise ValueError(f"unknown fov preset {self.fov_preset!r}")
        if self.rv_height <= 0 or self.rv_width <= 0:
            raise ValueError("range-view dims must be positive")
        for s in self.scales:
            if s <= 0 or self.rv_height % s or self.rv_width % s:
                raise ValueError(f"scale {s} must divide the range-view dims")
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        if self.loss_preset not in LOSS_WEIGHT_PRESETS:
            raise ValueError(f"unknown loss preset {self.loss_preset!r}")
        if self.sample_points <= 0:
            raise ValueError("sample_points must be positive")
        if not (0.0 <= self.importance_ratio <= 1.0):
            raise ValueError("importance_ratio must lie in [0, 1]")
        if self.min_points < 0 or self.train_steps < 0:
            raise ValueError("counts must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("camera_rig", "uncertainty_checkpoint", "fusion_checkpoint"):
            p = getattr(self, name)
            if p is not None:
                p = Path(p)
                if not p.exists():
                    raise FileNotFoundError(f"{name}: {p} does not exist")
                object.__setattr__(self, name, p)

    @property
    def loss_weights(self) -> LossWeights:
        return LOSS_WEIGHT_PRESETS[self.loss_preset]


_SECTION_KEYS = {
    "rv": {"preset", "height", "width"},
    "pipeline": {"scales", "feature_dim"},
    "loss": {"preset", "sample_points", "importance_ratio"},
    "eval": {"min_points", "confidence_threshold"},
    "training": {"steps", "learning_rate"},
    "seeds": {"scene", "degradations", "training", "harness", "features"},
    "paths": {"camera_rig", "uncertainty_checkpoint", "fusion_checkpoint"},
}


def _load_document(path: Path) -> dict:
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    raise ValueError(f"config must be .toml or .json, got {path.suffix!r}")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    doc = _load_document(path)
    version = doc.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version}")
    unknown = set(doc) - set(_SECTION_KEYS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    for section, keys in _SECTION_KEYS.items():
        extra = set(doc.get(section, {})) - keys
        if extra:
            raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")

    def get(section, key, default):
        return doc.get(section, {}).get(key, default)

    base = PipelineConfig()
    paths = {}
    for key in _SECTION_KEYS["paths"]:
        raw = get("paths", key, None)
        if raw:
            paths[key] = path.parent / raw
        else:
            paths[key] = None
    seeds = Seeds(
        **{k: int(get("seeds", k, getattr(Seeds(), k))) for k in _SECTION_KEYS["seeds"]}
    )
    return replace(
        base,
        fov_preset=get("rv", "preset", base.fov_preset),
        rv_height=int(get("rv", "height", base.rv_height)),
        rv_width=int(get("rv", "width", base.rv_width)),
        scales=tuple(get("pipeline", "scales", list(base.scales))),
        feature_dim=int(get("pipeline", "feature_dim", base.feature_dim)),
        loss_preset=get("loss", "preset", base.loss_preset),
        sample_points=int(get("loss", "sample_points", base.sample_points)),
        importance_ratio=float(get("loss", "importance_ratio", base.importance_ratio)),
        min_points=int(get("eval", "min_points", base.min_points)),
        confidence_threshold=float(
            get("eval", "confidence_threshold", base.confidence_threshold)
        ),
        train_steps=int(get("training", "steps", base.train_steps)),
        learning_rate=float(get("training", "learning_rate", base.learning_rate)),
        seeds=seeds,
        **paths,
    )


def save_config(config: PipelineConfig, path) -> None:
    """JSON form of the schema (TOML stays hand-written)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "rv": {
            "preset": config.fov_preset,
            "height": config.rv_height,
            "width": config.rv_width,
        },
        "pipeline": {
            "scales": list(config.scales),
            "feature_dim": config.feature_dim,
        },
        "loss": {
            "preset": config.loss_preset,
            "sample_points": config.sample_points,
            "importance_ratio": config.importance_ratio,
        },
        "eval": {
            "min_points": config.min_points,
            "confidence_threshold": config.confidence_threshold,
        },
        "training": {
            "steps": config.train_steps,
            "learning_rate": config.learning_rate,
        },
        "seeds": {
            "scene": config.seeds.scene,
            "degradations": config.seeds.degradations,
            "training": config.seeds.training,
            "harness": config.seeds.harness,
            "features": config.seeds.features,
        },
        "paths": {
            k: str(getattr(config, k)) if getattr(config, k) else ""
            for k in ("camera_rig", "uncertainty_checkpoint", "fusion_checkpoint")
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
