"""Config loading, merging, and validation."""

import json

import pytest

from mpqmri.config import DESK_DEFAULTS, ExperimentConfig, load_config


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.raw["phantom"]["shape"] == [64, 64, 8]
    assert cfg.r_values == [1.0, 12.0, 27.0, 48.0]
    assert set(cfg.methods) == {"zero_filled", "lrt_admm", "lorein"}
    assert cfg.clamps["t1"] == (0.0, 3500.0)
    assert cfg.protocol().n_frames == 60


def test_partial_override_merges_deep():
    cfg = ExperimentConfig(raw={"mask": {"R": [4.0]}, "seed": 9})
    assert cfg.r_values == [4.0]
    assert cfg.seed == 9
    # untouched branches keep their defaults
    assert cfg.raw["mask"]["pattern"] == DESK_DEFAULTS["mask"]["pattern"]
    assert cfg.raw["phantom"]["seed"] == 7


def test_defaults_not_mutated():
    cfg = ExperimentConfig(raw={"phantom": {"shape": [16, 16, 8]}})
    cfg.raw["mask"]["R"].append(99.0)
    assert DESK_DEFAULTS["phantom"]["shape"] == [64, 64, 8]
    assert DESK_DEFAULTS["mask"]["R"] == [1.0, 12.0, 27.0, 48.0]


def test_validation():
    with pytest.raises(ValueError, match="unknown method"):
        ExperimentConfig(raw={"methods": {"deep_magic": {}}})
    with pytest.raises(ValueError):
        ExperimentConfig(raw={"mask": {"R": []}})
    with pytest.raises(ValueError):
        ExperimentConfig(raw={"mask": {"R": [0.5]}})
    with pytest.raises(ValueError):
        ExperimentConfig(raw={"noise_sigma_rel": -0.1})


def test_load_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"seed": 5, "out_dir": "runs/a"}))
    cfg = load_config(path)
    assert cfg.seed == 5 and cfg.out_dir == "runs/a"
    cfg2 = load_config(path, overrides={"out_dir": "runs/b"})
    assert cfg2.out_dir == "runs/b"
    assert load_config(None).seed == 0


def test_protocol_presets_and_custom():
    assert ExperimentConfig(raw={"protocol": {"name": "dataset2"}}).protocol().n_frames == 320
    cfg = ExperimentConfig(raw={"protocol": {
        "name": None, "kind": "VFA_MEGRE", "tr_ms": 30.0, "te_ms": [5.0, 10.0],
        "flip_deg": [5.0, 20.0]}})
    assert cfg.protocol().n_frames == 4
    with pytest.raises(ValueError, match="preset"):
        ExperimentConfig(raw={"protocol": {"name": "dataset9"}}).protocol()
