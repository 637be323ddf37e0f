"""Config schema: loading, saving, validation, worker count."""

import json

import pytest

from rangefuse.config import (
    SCHEMA_VERSION,
    THREADS_ENV,
    PipelineConfig,
    Seeds,
    load_config,
    save_config,
    worker_count,
)


def test_defaults_validate():
    cfg = PipelineConfig()
    assert cfg.fov_preset == "nuscenes"
    assert (cfg.rv_height, cfg.rv_width) == (64, 512)
    assert cfg.scales == (4,)
    assert cfg.camera_rig is None
    assert cfg.loss_weights.cls > 0


def test_seeds_defaults():
    s = Seeds()
    assert (s.scene, s.degradations, s.training, s.harness, s.features) == (
        7, 11, 13, 17, 23,
    )


def test_load_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "schema_version = 1\n"
        "[rv]\nheight = 32\nwidth = 256\n"
        "[pipeline]\nscales = [2, 4]\nfeature_dim = 8\n"
        "[loss]\nimportance_ratio = 0.5\n"
        "[training]\nsteps = 10\n"
        "[seeds]\nscene = 99\n"
    )
    cfg = load_config(path)
    assert (cfg.rv_height, cfg.rv_width) == (32, 256)
    assert cfg.scales == (2, 4)
    assert cfg.feature_dim == 8
    assert cfg.importance_ratio == 0.5
    assert cfg.train_steps == 10
    assert cfg.seeds.scene == 99
    assert cfg.seeds.harness == 17  # untouched default


def test_json_round_trip(tmp_path):
    original = PipelineConfig(rv_height=32, rv_width=128, feature_dim=8,
                              seeds=Seeds(scene=3))
    path = tmp_path / "cfg.json"
    save_config(original, path)
    assert load_config(path) == original


def test_paths_resolve_relative_to_config_file(tmp_path):
    rig = tmp_path / "rig.json"
    rig.write_text("{}")
    sub = tmp_path / "sub"
    sub.mkdir()
    path = sub / "cfg.json"
    path.write_text(json.dumps({"paths": {"camera_rig": "../rig.json"}}))
    cfg = load_config(path)
    assert cfg.camera_rig == sub / ".." / "rig.json"


def test_missing_path_errors(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"paths": {"camera_rig": "nope.json"}}))
    with pytest.raises(FileNotFoundError):
        load_config(path)


def test_unknown_section_and_key_error(tmp_path):
    bad_section = tmp_path / "a.json"
    bad_section.write_text(json.dumps({"mystery": {}}))
    with pytest.raises(ValueError, match="unknown config sections"):
        load_config(bad_section)
    bad_key = tmp_path / "b.json"
    bad_key.write_text(json.dumps({"rv": {"depth": 3}}))
    with pytest.raises(ValueError, match="unknown keys"):
        load_config(bad_key)


def test_schema_version_mismatch(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"schema_version": SCHEMA_VERSION + 1}))
    with pytest.raises(ValueError, match="schema_version"):
        load_config(path)


def test_bad_suffix(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("rv: {}")
    with pytest.raises(ValueError, match="toml or .json"):
        load_config(path)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"fov_preset": "unknown"},
        {"rv_height": 0},
        {"scales": (3,)},  # 3 does not divide 64 or 512
        {"feature_dim": -1},
        {"loss_preset": "unknown"},
        {"sample_points": 0},
        {"importance_ratio": 1.5},
        {"min_points": -1},
        {"learning_rate": 0.0},
    ],
)
def test_field_validation(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs)


def test_worker_count_default(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert worker_count() == 1


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "4")
    assert worker_count() == 4


@pytest.mark.parametrize("raw", ["zero", "0", "-2", "1.5"])
def test_worker_count_invalid(monkeypatch, raw):
    monkeypatch.setenv(THREADS_ENV, raw)
    with pytest.raises(ValueError):
        worker_count()
