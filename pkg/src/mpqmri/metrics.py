"""Evaluation metrics and the experiment results table."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# map-type value caps applied before NRMSE (ms for the relaxation maps)
DEFAULT_CLAMPS = {"t1": (0.0, 3500.0), "t2": (0.0, 200.0), "t2s": (0.0, 100.0)}


def nrmse(pred, gt, clamp=None, mask=None) -> float:
    """Normalized RMS error ||pred - gt|| / ||gt||, after optional clamping.

    Both volumes are clamped elementwise to [lo, hi] when a clamp is given
    and restricted to the mask before the norms are taken.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if clamp is not None:
        lo, hi = clamp
        pred = np.clip(pred, lo, hi)
        gt = np.clip(gt, lo, hi)
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        pred = pred[m]
        gt = gt[m]
    denom = np.linalg.norm(gt)
    if denom == 0:
        raise ValueError("ground truth has zero norm on the evaluation mask")
    return float(np.linalg.norm(pred - gt) / denom)


@dataclass
class MetricsTable:
    """Rows of (method, R, map type, NRMSE) plus per-cell wall-clock times.

    Timings live in a separate list so that the metric rows serialize
    byte-identically across repeated runs of the same config and seed.
    """

    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add(self, method, R, map_type, value):
        if value < 0:
            raise ValueError("NRMSE must be >= 0")
        self.rows.append({"method": method, "R": R, "map": map_type, "nrmse": value})

    def add_timing(self, method, R, seconds):
        self.timings.append({"method": method, "R": R, "seconds": seconds})

    def add_failure(self, method, R, message):
        self.failures.append({"method": method, "R": R, "error": message})

    def get(self, method, R, map_type) -> float:
        for row in self.rows:
            if row["method"] == method and row["R"] == R and row["map"] == map_type:
                return row["nrmse"]
        raise KeyError((method, R, map_type))

    def to_csv(self) -> str:
        lines = ["method,R,map,nrmse"]
        for row in sorted(self.rows, key=lambda r: (r["method"], r["R"], r["map"])):
            lines.append(f"{row['method']},{row['R']:.6g},{row['map']},{row['nrmse']:.12e}")
        return "\n".join(lines) + "\n"

    def timings_csv(self) -> str:
        lines = ["method,R,seconds"]
        for row in sorted(self.timings, key=lambda r: (r["method"], r["R"])):
            lines.append(f"{row['method']},{row['R']:.6g},{row['seconds']:.3f}")
        return "\n".join(lines) + "\n"
