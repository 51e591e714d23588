"""Telemetry ingestion, resampling, normalization, windowing and synthetic flights.

Sample convention: ``controls[k]`` is the command held over the interval that
ends at ``states[k]``, so the transition ``states[k-1] -> states[k]`` is driven
by ``controls[k]``. An augmented column ``[states[k]; controls[k]]`` therefore
pairs each state with the command that produced it, and a window anchored at
``t0`` predicts ``states[t0+1..t0+F]`` from ``controls[t0+1..t0+F]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import physics
from .errors import DataError, ShapeError, TelemetryError
from .physics import PhysicsParams
from .quadstate import (
    AUGMENTED_DIM,
    CONTROL_DIM,
    CONTROL_NAMES,
    ETA,
    STATE_DIM,
    STATE_NAMES,
    TRUNCATED_DIM,
)

CSV_HEADER = ("t",) + STATE_NAMES + CONTROL_NAMES
CONSTANT_STD = 1e-8


@dataclass(frozen=True)
class Trajectory:
    """One flight: timestamps ``(N,)``, states ``(N, 12)``, controls ``(N, 4)``."""

    timestamps: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    source: str = ""

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        x = np.asarray(self.states, dtype=float)
        u = np.asarray(self.controls, dtype=float)
        n = t.shape[0] if t.ndim == 1 else -1
        if n < 2 or x.shape != (n, STATE_DIM) or u.shape != (n, CONTROL_DIM):
            raise ShapeError(
                f"trajectory needs N >= 2 samples with (N,), (N,12), (N,4); got {t.shape}, {x.shape}, {u.shape}"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise DataError("trajectory contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise DataError("timestamps must be strictly increasing")
        for name, arr in (("timestamps", t), ("states", x), ("controls", u)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.timestamps.shape[0]

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


# ---------------------------------------------------------------------------
# CSV telemetry


def load_telemetry(path) -> Trajectory:
    """Parse a telemetry CSV (header ``t,roll,...,u4``; ``#`` comments allowed before it)."""
    path = Path(path)
    rows, times = [], []
    header_seen = False
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not header_seen:
                if not stripped or stripped.startswith("#"):
                    continue
                cols = tuple(c.strip() for c in stripped.split(","))
                if cols != CSV_HEADER:
                    missing = [c for c in CSV_HEADER if c not in cols]
                    detail = f"missing columns {missing}" if missing else "columns out of order or extra"
                    raise TelemetryError(f"bad header ({detail}); expected {','.join(CSV_HEADER)}", lineno)
                header_seen = True
                continue
            if not stripped:
                continue
            fields_ = next(csv.reader([stripped]))
            if len(fields_) != len(CSV_HEADER):
                raise TelemetryError(f"expected {len(CSV_HEADER)} fields, got {len(fields_)}", lineno)
            try:
                values = [float(f) for f in fields_]
            except ValueError as exc:
                raise TelemetryError(f"unparseable number ({exc})", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise TelemetryError("non-finite value", lineno)
            if times and values[0] <= times[-1][0]:
                raise TelemetryError(
                    f"timestamp {values[0]!r} does not increase (previous {times[-1][0]!r})", lineno
                )
            times.append((values[0], lineno))
            rows.append(values)
    if not header_seen:
        raise TelemetryError(f"{path}: no header row found")
    if len(rows) < 2:
        raise TelemetryError(f"{path}: need at least 2 samples, got {len(rows)}")
    data = np.array(rows)
    return Trajectory(data[:, 0], data[:, 1:13], data[:, 13:17], source=str(path))


def save_telemetry(traj: Trajectory, path, comment: str | None = None) -> None:
    """Write ``traj`` in the telemetry CSV format with 17 significant digits."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(",".join(CSV_HEADER) + "\n")
        data = np.column_stack([traj.timestamps, traj.states, traj.controls])
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


# ---------------------------------------------------------------------------
# Resampling


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def interpolate_uniform(traj: Trajectory, rate: float = 100.0) -> Trajectory:
    """Resample onto a uniform grid starting at the first timestamp.

    States are linearly interpolated (Euler angles along the shortest arc);
    controls are zero-order held.
    """
    if rate <= 0:
        raise DataError("rate must be positive")
    t = traj.timestamps
    if traj.duration < 2.0 / rate:
        raise DataError(f"trajectory spans {traj.duration:.4g} s, need at least {2.0 / rate:.4g} s")
    n = int(math.floor(traj.duration * rate + 1e-9)) + 1
    grid = t[0] + np.arange(n) / rate
    grid[-1] = min(grid[-1], t[-1])

    idx = np.searchsorted(t, grid, side="right") - 1
    idx = np.clip(idx, 0, len(t) - 2)
    s = (grid - t[idx]) / (t[idx + 1] - t[idx])
    x0, x1 = traj.states[idx], traj.states[idx + 1]
    delta = x1 - x0
    delta[:, ETA] = _wrap(delta[:, ETA])
    states = x0 + s[:, None] * delta

    hold = np.searchsorted(t, grid + 1e-12 * max(1.0, abs(t[-1])), side="right") - 1
    controls = traj.controls[np.clip(hold, 0, len(t) - 1)]
    return Trajectory(grid, states, controls, source=traj.source)


# ---------------------------------------------------------------------------
# Normalization


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics for the 16 inputs and 6 labels."""

    input_mean: np.ndarray
    input_std: np.ndarray
    label_mean: np.ndarray
    label_std: np.ndarray
    input_constant: np.ndarray = field(default=None)
    label_constant: np.ndarray = field(default=None)

    @property
    def state_mean(self):
        return self.input_mean[:STATE_DIM]

    @property
    def state_std(self):
        return self.input_std[:STATE_DIM]

    @property
    def control_mean(self):
        return self.input_mean[STATE_DIM:]

    @property
    def control_std(self):
        return self.input_std[STATE_DIM:]

    def normalize_states(self, x):
        return (np.asarray(x) - self.state_mean) / self.state_std

    def denormalize_states(self, z):
        return np.asarray(z) * self.state_std + self.state_mean

    def normalize_controls(self, u):
        return (np.asarray(u) - self.control_mean) / self.control_std

    def denormalize_controls(self, z):
        return np.asarray(z) * self.control_std + self.control_mean

    def normalize_labels(self, y, axis=-1):
        return (np.asarray(y) - _along(self.label_mean, y, axis)) / _along(self.label_std, y, axis)

    def denormalize_labels(self, z, axis=-1):
        return np.asarray(z) * _along(self.label_std, z, axis) + _along(self.label_mean, z, axis)

    def as_arrays(self) -> dict:
        return {
            "input_mean": self.input_mean, "input_std": self.input_std,
            "label_mean": self.label_mean, "label_std": self.label_std,
        }

    @classmethod
    def from_arrays(cls, d) -> NormStats:
        return cls(np.asarray(d["input_mean"], float), np.asarray(d["input_std"], float),
                   np.asarray(d["label_mean"], float), np.asarray(d["label_std"], float))


def _along(v, arr, axis):
    shape = [1] * np.ndim(arr)
    shape[axis] = -1
    return np.reshape(v, shape)


def _mean_std(data):
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    constant = std < CONSTANT_STD
    return mean, np.where(constant, 1.0, std), constant


def fit_norm_stats(trainset) -> NormStats:
    """Channel statistics over every sample of the training trajectories."""
    trainset = list(trainset)
    if not trainset:
        raise DataError("cannot fit normalization on an empty training set")
    states = np.concatenate([t.states for t in trainset])
    controls = np.concatenate([t.controls for t in trainset])
    im, is_, ic = _mean_std(np.column_stack([states, controls]))
    lm, ls, lc = _mean_std(states[:, 6:12])
    return NormStats(im, is_, lm, ls, ic, lc)


# ---------------------------------------------------------------------------
# Windows


@dataclass(frozen=True)
class WindowSample:
    X_p: np.ndarray  # (P, 12)
    U_p: np.ndarray  # (P, 4)
    U_f: np.ndarray  # (F, 4)
    Y_f: np.ndarray  # (F, 6)
    traj_id: int
    t0: int


def window_count(n: int, past: int, future: int, stride: int) -> int:
    if n < past + future:
        return 0
    return (n - past - future) // stride + 1


def make_windows(trajs, past: int, future: int, stride: int = 1) -> list[WindowSample]:
    """Cut every trajectory into (past, future) windows anchored at ``t0 = P-1 + j*stride``."""
    if past < 1 or future < 1 or stride < 1:
        raise DataError("past, future and stride must be >= 1")
    out = []
    for tid, traj in enumerate(trajs):
        X, U = traj.states, traj.controls
        n = X.shape[0]
        for t0 in range(past - 1, n - future, stride):
            out.append(WindowSample(
                X_p=X[t0 - past + 1:t0 + 1],
                U_p=U[t0 - past + 1:t0 + 1],
                U_f=U[t0 + 1:t0 + future + 1],
                Y_f=X[t0 + 1:t0 + future + 1, 6:12],
                traj_id=tid,
                t0=t0,
            ))
    return out


def window_arrays(windows, stats: NormStats | None = None, dtype=np.float64):
    """Stack windows into network inputs ``(N, 16, P+F)`` and labels ``(N, 6, F)``.

    Normalization is applied before the future state rows are zeroed, so the
    masked entries stay exactly zero.
    """
    if not windows:
        raise DataError("no windows to stack")
    X_p = np.stack([w.X_p for w in windows])
    U_p = np.stack([w.U_p for w in windows])
    U_f = np.stack([w.U_f for w in windows])
    Y = np.stack([w.Y_f for w in windows])
    if stats is not None:
        X_p = stats.normalize_states(X_p)
        U_p = stats.normalize_controls(U_p)
        U_f = stats.normalize_controls(U_f)
        Y = stats.normalize_labels(Y)
    n, P, F = len(windows), X_p.shape[1], U_f.shape[1]
    X = np.zeros((n, AUGMENTED_DIM, P + F), dtype=dtype)
    X[:, :STATE_DIM, :P] = X_p.transpose(0, 2, 1)
    X[:, STATE_DIM:, :P] = U_p.transpose(0, 2, 1)
    X[:, STATE_DIM:, P:] = U_f.transpose(0, 2, 1)
    return X, np.ascontiguousarray(Y.transpose(0, 2, 1), dtype=dtype)


def split_dataset(trajs, test_frac: float = 0.1, seed: int = 0):
    """Trajectory-level seeded split; returns ``(train, test)``."""
    trajs = list(trajs)
    if not 0.0 < test_frac < 1.0:
        raise DataError("test_frac must be in (0, 1)")
    if len(trajs) < 2:
        raise DataError("need at least 2 trajectories to split")
    n_test = max(1, int(round(test_frac * len(trajs))))
    n_test = min(n_test, len(trajs) - 1)
    order = np.random.default_rng(seed).permutation(len(trajs))
    test_idx = set(order[:n_test].tolist())
    train = [t for i, t in enumerate(trajs) if i not in test_idx]
    test = [t for i, t in enumerate(trajs) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# Synthetic flights

POSITION_LIMIT = 5.0
ANGLE_LIMIT = 1.0
MAX_RETRIES = 20


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic flight generator."""

    amplitude: float = 0.15  # summed sinusoid amplitude per motor, fraction of hover command
    f_min: float = 0.2
    f_max: float = 2.0
    perturbation: float = 1.0  # scale of the random initial offset from hover
    dt: float = physics.DT
    substeps: int = physics.SUBSTEPS


class _Stabilizer:
    """Cascaded PD (position -> attitude -> torque) acting as the onboard pilot.

    The mixing matrix has rank 3 (its roll and yaw rows are collinear), so
    only thrust, roll and pitch torque are commanded; yaw follows roll.
    """

    def __init__(self, params: PhysicsParams, kp_pos=1.0, kd_pos=1.6, kp_att=64.0, kd_att=12.0,
                 max_tilt=0.35, max_accel=3.0):
        self.p = params
        self.kp_pos, self.kd_pos = kp_pos, kd_pos
        self.kp_att, self.kd_att = kp_att, kd_att
        self.max_tilt, self.max_accel = max_tilt, max_accel
        self.mix_pinv = np.linalg.pinv(physics.mixing_matrix(params)[:3])
        self.inertia = np.asarray(params.inertia)

    def __call__(self, x):
        p = self.p
        eta, r, w, v = x[:, 0:3], x[:, 3:6], x[:, 6:9], x[:, 9:12]
        a = -self.kp_pos * r - self.kd_pos * v
        norm = np.linalg.norm(a, axis=1, keepdims=True)
        a = a * np.minimum(1.0, self.max_accel / np.maximum(norm, 1e-12))
        f = p.mass * (a + np.array([0.0, 0.0, p.gravity]))
        psi = eta[:, 2]
        fx = f[:, 0] * np.cos(psi) + f[:, 1] * np.sin(psi)
        fy = -f[:, 0] * np.sin(psi) + f[:, 1] * np.cos(psi)
        fn = np.linalg.norm(f, axis=1)
        roll_d = np.clip(np.arcsin(np.clip(-fy / fn, -1, 1)), -self.max_tilt, self.max_tilt)
        pitch_d = np.clip(np.arctan2(fx, f[:, 2]), -self.max_tilt, self.max_tilt)
        err = np.stack([roll_d - eta[:, 0], pitch_d - eta[:, 1]], axis=1)
        tau = self.inertia[:2] * (self.kp_att * err - self.kd_att * w[:, :2])
        thrust = p.mass * (a[:, 2] + p.gravity) / np.maximum(np.cos(eta[:, 0]) * np.cos(eta[:, 1]), 0.5)
        w2 = np.column_stack([thrust, tau]) @ self.mix_pinv.T
        speed = np.sqrt(np.maximum(w2, 0.0))
        return (speed - p.motor_bias) / p.motor_gain


def _draw_candidate(rng, spec: SynthSpec, hover: float):
    amp = spec.amplitude * hover * rng.uniform(0.0, 1.0, size=(4, 3)) / 3.0
    freq = rng.uniform(spec.f_min, spec.f_max, size=(4, 3))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(4, 3))
    s = spec.perturbation
    x0 = np.concatenate([
        rng.uniform(-0.05, 0.05, 3) * s,
        rng.uniform(-0.5, 0.5, 3) * s,
        np.array([0.1, 0.1, 0.02]) * rng.uniform(-1.0, 1.0, 3) * s,
        rng.uniform(-0.1, 0.1, 3) * s,
    ])
    return x0, amp, freq, phase


def _simulate(params, spec, x0, amp, freq, phase, n_steps):
    """Integrate a batch of candidates; returns states, controls and an in-envelope mask."""
    B = x0.shape[0]
    pilot = _Stabilizer(params)
    hover = physics.hover_command(params)
    states = np.empty((B, n_steps, STATE_DIM))
    controls = np.empty((B, n_steps, CONTROL_DIM))
    ok = np.ones(B, dtype=bool)
    x = x0.copy()

    def command(x, t):
        excite = np.sum(amp * np.sin(2.0 * np.pi * freq * t + phase), axis=2)
        if spec.amplitude == 0.0:
            excite = np.zeros_like(excite)
        feedback = pilot(x) - hover
        return np.maximum(hover + feedback + excite, 0.0)

    states[:, 0] = x
    controls[:, 0] = command(x, -spec.dt)
    for k in range(1, n_steps):
        u = command(x, (k - 1) * spec.dt)
        x = physics.integrate_step(x, u, spec.dt, params, spec.substeps)
        states[:, k] = x
        controls[:, k] = u
        inside = (np.max(np.abs(x[:, 3:6]), axis=1) <= POSITION_LIMIT) & \
                 (np.max(np.abs(x[:, 0:3]), axis=1) <= ANGLE_LIMIT)
        ok &= inside
        # freeze escaped candidates at a benign state so the batch stays finite
        x = np.where(ok[:, None], x, 0.0)
    return states, controls, ok


def synth_trajectories(params: PhysicsParams, n: int, duration: float, seed: int = 0,
                       spec: SynthSpec | None = None) -> list[Trajectory]:
    """Closed-loop synthetic flights sampled at ``1/spec.dt``.

    The recorded command is the stabilizer output plus, per motor, three
    random-phase sinusoids between ``f_min`` and ``f_max``. Candidates leaving
    the 5 m / 1 rad envelope are redrawn from the trajectory's own random
    stream, so the output for a given seed does not depend on ``n``.
    """
    spec = spec or SynthSpec()
    if n < 1:
        raise DataError("n must be >= 1")
    n_steps = int(round(duration / spec.dt)) + 1
    if n_steps < 2:
        raise DataError("duration too short")
    hover = physics.hover_command(params)
    rngs = [np.random.default_rng([seed, i]) for i in range(n)]
    result: list[Trajectory | None] = [None] * n
    pending = list(range(n))
    for _attempt in range(MAX_RETRIES + 1):
        if not pending:
            break
        cands = [_draw_candidate(rngs[i], spec, hover) for i in pending]
        x0 = np.stack([c[0] for c in cands])
        amp, freq, phase = (np.stack([c[j] for c in cands]) for j in (1, 2, 3))
        states, controls, ok = _simulate(params, spec, x0, amp, freq, phase, n_steps)
        still = []
        for j, i in enumerate(pending):
            if ok[j]:
                t = np.arange(n_steps) * spec.dt
                result[i] = Trajectory(t, states[j], controls[j], source=f"synth:{seed}:{i}")
            else:
                still.append(i)
        pending = still
    if pending:
        raise DataError(f"could not generate bounded trajectories {pending} after {MAX_RETRIES} retries")
    return result  # type: ignore[return-value]
