"""Horizon error reports, order statistics and published reference rows."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError

RATE = slice(0, 3)
VEL = slice(3, 6)
PERCENTILES = (50, 75, 90, 99, 100)
SUMMARY_STEPS = (1, 45, 90)
REFERENCE_LABEL = "published"

# Published values, kept verbatim as printed.
# Multi-step results: (velocity, body rate) MSE at steps 1, 45, 90.
REFERENCE_HORIZON = {
    "Physics-based": (("0.00003", "0.000572"), ("0.0892", "0.0981"), ("0.938", "1.08")),
    "LSTM Hybrid": (("0.00441", "0.616"), ("0.0217", "2.30"), ("0.0384", "3.01")),
    "Motor-Hybrid": (("0.0100", "0.00543"), ("0.115", "0.269"), ("0.115", "0.632")),
    "AccelError-Hybrid": (("0.0153", "0.00356"), ("0.200", "0.187"), ("0.205", "0.625")),
    "Combined-Hybrid": (("0.0124", "0.0126"), ("0.178", "0.535"), ("0.192", "1.02")),
    "End2End-TCN": (("0.000735", "0.00197"), ("0.00881", "0.0352"), ("0.0357", "0.0464")),
}

# Size study: layers -> (parameters, forward passes/s, vel@45, rate@45, vel@90, rate@90).
REFERENCE_SCALING = {
    5: ("298,346", "492.6", "0.0102", "0.0387", "0.0423", "0.0634"),
    8: ("1,166,794", "383.7", "0.0088", "0.0352", "0.0357", "0.0464"),
    10: ("4,640,266", "302.4", "0.0087", "0.0403", "0.0353", "0.0663"),
    12: ("18,517,706", "243.7", "0.0148", "0.0398", "0.0412", "0.0654"),
}

# Ablation grid: row -> (velocity, body rate) MSE.
REFERENCE_ABLATION = {
    "none": ("0.0198", "0.0715"),
    "BN": ("0.0172", "0.0401"),
    "BN+Drop": ("0.0217", "0.0433"),
    "BN+SG": ("0.0329", "0.0440"),
    "BN+WL2": ("0.0317", "0.0700"),
    "BN+L1": ("0.0158", "0.0396"),
}


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def summary_steps(F: int) -> list[int]:
    """Steps 1, 45, 90 that fit in the horizon, plus the final step."""
    steps = [s for s in SUMMARY_STEPS if s <= F]
    if F not in steps:
        steps.append(F)
    return steps


def window_errors(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    """Per-window, per-step squared error averaged over the 3 velocity and 3 rate channels."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 6:
        raise DataError(f"predictions {pred.shape} and labels {truth.shape} must both be (N, F, 6)")
    sq = (pred - truth) ** 2
    return sq[..., VEL].mean(axis=-1), sq[..., RATE].mean(axis=-1)


@dataclass
class HorizonReport:
    model: str
    vel_err: np.ndarray  # (N, F)
    rate_err: np.ndarray  # (N, F)
    dt: float = 0.01

    @classmethod
    def from_predictions(cls, model, pred, truth, dt=0.01) -> HorizonReport:
        v, r = window_errors(pred, truth)
        if v.shape[0] == 0:
            raise DataError("empty test set")
        return cls(model, v, r, dt)

    @property
    def horizon(self) -> int:
        return self.vel_err.shape[1]

    @property
    def vel_mse(self) -> np.ndarray:
        return self.vel_err.mean(axis=0)

    @property
    def rate_mse(self) -> np.ndarray:
        return self.rate_err.mean(axis=0)

    def at(self, step: int) -> tuple[float, float]:
        if not 1 <= step <= self.horizon:
            raise DataError(f"horizon step {step} outside 1..{self.horizon}")
        return float(self.vel_mse[step - 1]), float(self.rate_mse[step - 1])

    def percentiles(self, which: str = "vel") -> np.ndarray:
        err = self.vel_err if which == "vel" else self.rate_err
        return np.percentile(err, PERCENTILES, axis=0).T  # (F, 5)

    def to_csv(self) -> str:
        head = ["step", "time_s", "vel_mse", "rate_mse"]
        head += [f"vel_p{q}" for q in PERCENTILES] + [f"rate_p{q}" for q in PERCENTILES]
        lines = [",".join(head).replace("p100", "max")]
        vp, rp = self.percentiles("vel"), self.percentiles("rate")
        for i in range(self.horizon):
            row = [i + 1, (i + 1) * self.dt, self.vel_mse[i], self.rate_mse[i], *vp[i], *rp[i]]
            lines.append(",".join(fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        steps = summary_steps(self.horizon)
        heads = [f"t={s * self.dt:.2f}s vel" for s in steps] + [f"t={s * self.dt:.2f}s rate" for s in steps]
        rows = [[self.model] + [fmt(self.at(s)[0]) for s in steps] + [fmt(self.at(s)[1]) for s in steps]]
        out = aligned(["model"] + heads, rows)
        return out + "\n" + reference_horizon_table()


def reference_horizon_table() -> str:
    heads = [f"t={s * 0.01:.2f}s vel" for s in SUMMARY_STEPS] + [f"t={s * 0.01:.2f}s rate" for s in SUMMARY_STEPS]
    rows = [[f"{name} ({REFERENCE_LABEL})"] + [v[0] for v in vals] + [v[1] for v in vals]
            for name, vals in REFERENCE_HORIZON.items()]
    return aligned(["reference"] + heads, rows)


def aligned(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")
    return buf.getvalue()


def box_stats(values) -> dict:
    """Median, quartiles, whiskers at 1.5 IQR (clamped to the data) and max."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise DataError("no values for box statistics")
    q1, med, q3 = np.percentile(x, (25, 50, 75))
    iqr = q3 - q1
    lo = x[x >= q1 - 1.5 * iqr][0]
    hi = x[x <= q3 + 1.5 * iqr][-1]
    return {"median": med, "q1": q1, "q3": q3, "whisker_lo": lo, "whisker_hi": hi, "max": x[-1]}


def outlier_count(n: int, share: float = 0.1) -> int:
    return int(math.ceil(share * n - 1e-12))


def reference_scaling_rows():
    return [[f"{layers} ({REFERENCE_LABEL})", *vals] for layers, vals in REFERENCE_SCALING.items()]


def reference_ablation_rows():
    return [[f"{name} ({REFERENCE_LABEL})", *vals] for name, vals in REFERENCE_ABLATION.items()]
