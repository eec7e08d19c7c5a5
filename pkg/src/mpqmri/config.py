"""Experiment configuration: JSON-backed, with desk-scale defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from mpqmri.metrics import DEFAULT_CLAMPS
from mpqmri.signal_models import (
    SequenceProtocol,
    dataset1_protocol,
    dataset2_protocol,
)

KNOWN_METHODS = ("lorein", "zero_filled", "lrt_admm")

# desk-scale default experiment: 64x64x8 volume, 8 coils, VFA-mEGRE timings
DESK_DEFAULTS = {
    "seed": 0,
    "phantom": {"shape": [64, 64, 8], "seed": 7, "freq_max_hz": 3.0},
    "coils": {"n_coils": 8, "seed": 11},
    "protocol": {"name": "dataset1"},
    "subspace": {"K": 15},
    "mask": {"pattern": "VARIABLE_DENSITY", "R": [1.0, 12.0, 27.0, 48.0],
             "seed": 3, "calib_region": [0, 0, 0]},
    "noise_sigma_rel": 0.005,
    "methods": {
        "zero_filled": {},
        "lrt_admm": {"lambda_tv_rel": [1e-4, 1e-3, 1e-2], "rho": 1.0,
                     "max_iters": 30, "cg_iters": 8, "tol": 1e-4},
        "lorein": {"epochs": 200, "pretrain_epochs": 20, "lr": 1e-3,
                   "decay_every": 80},
    },
    "out_dir": "results",
    "clamps": {k: list(v) for k, v in DEFAULT_CLAMPS.items()},
}


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DESK_DEFAULTS))

    def __post_init__(self):
        merged = copy.deepcopy(DESK_DEFAULTS)
        _deep_update(merged, self.raw)
        self.raw = merged
        self.validate()

    def validate(self):
        if not self.raw["methods"]:
            raise ValueError("at least one method is required")
        for name in self.raw["methods"]:
            if name not in KNOWN_METHODS:
                raise ValueError(f"unknown method {name!r}")
        if not self.raw["mask"]["R"]:
            raise ValueError("at least one acceleration factor is required")
        if any(r < 1 for r in self.raw["mask"]["R"]):
            raise ValueError("acceleration factors must be >= 1")
        if self.raw["noise_sigma_rel"] < 0:
            raise ValueError("noise_sigma_rel must be >= 0")

    # convenience accessors -------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out_dir(self) -> str:
        return self.raw["out_dir"]

    @property
    def r_values(self):
        return [float(r) for r in self.raw["mask"]["R"]]

    @property
    def methods(self) -> dict:
        return self.raw["methods"]

    @property
    def clamps(self):
        return {k: tuple(v) for k, v in self.raw["clamps"].items()}

    def protocol(self) -> SequenceProtocol:
        p = self.raw["protocol"]
        # a custom protocol overrides the preset by setting "name" to null
        if p.get("name"):
            if p["name"] == "dataset1":
                return dataset1_protocol()
            if p["name"] == "dataset2":
                return dataset2_protocol(n_segments=p.get("n_segments", 20))
            raise ValueError(f"unknown protocol preset {p['name']!r}")
        return SequenceProtocol(
            kind=p["kind"], tr_ms=p["tr_ms"], te_ms=tuple(p.get("te_ms", ())),
            flip_deg=tuple(p.get("flip_deg", ())), tau_ms=tuple(p.get("tau_ms", ())),
            n_segments=p.get("n_segments", 0),
        )


def _deep_update(base: dict, update: dict):
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = copy.deepcopy(v)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Load a JSON config file, falling back to the desk-scale defaults."""
    raw = {}
    if path is not None:
        with open(path) as f:
            raw = json.load(f)
    cfg = ExperimentConfig(raw=raw)
    if overrides:
        _deep_update(cfg.raw, overrides)
        cfg.validate()
    return cfg
