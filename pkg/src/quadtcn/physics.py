"""Newton-Euler quadrotor model, fixed-step integration and parameter identification.

All dynamics functions broadcast over leading axes: a state is ``(..., 12)``,
rotor speeds and commands are ``(..., 4)`` and a body wrench
``[T_tot, tau_1, tau_2, tau_3]`` is ``(..., 4)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError, DataError, NumericFault, RankDeficientError, ShapeError
from .quadstate import ETA, POS, RATE, STATE_DIM, VEL, euler_rates, truncate_state

log = logging.getLogger(__name__)

DT = 0.01
SUBSTEPS = 4

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PhysicsParams:
    """Rigid-body and rotor constants.

    ``inertia`` holds the diagonal of the body inertia tensor. The motor map
    is ``rotor_speed = motor_gain * command + motor_bias`` clamped at zero.
    """

    mass: float = 1.0
    inertia: tuple = (0.01, 0.01, 0.02)
    arm_length: float = 0.21
    thrust_coeff: float = 8e-6
    torque_coeff: float = 1e-7
    drag_t: float = 0.05
    drag_r: float = 0.001
    gravity: float = 9.81
    motor_gain: float = 50.0
    motor_bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(i) for i in self.inertia))
        if len(self.inertia) != 3:
            raise ConfigError("inertia must have three diagonal entries")
        checks = [
            (self.mass > 0, "mass must be > 0"),
            (all(i > 0 for i in self.inertia), "inertia entries must be > 0"),
            (self.arm_length > 0, "arm_length must be > 0"),
            (self.thrust_coeff > 0, "thrust_coeff must be > 0"),
            (self.torque_coeff > 0, "torque_coeff must be > 0"),
            (self.drag_t >= 0, "drag_t must be >= 0"),
            (self.drag_r >= 0, "drag_r must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        values = [self.mass, *self.inertia, self.arm_length, self.thrust_coeff, self.torque_coeff,
                  self.drag_t, self.drag_r, self.gravity, self.motor_gain, self.motor_bias]
        if not all(math.isfinite(v) for v in values):
            raise ConfigError("physics parameters must be finite")

    def to_dict(self) -> dict:
        d = asdict(self)
        ixx, iyy, izz = d.pop("inertia")
        d.update(inertia_xx=ixx, inertia_yy=iyy, inertia_zz=izz)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PhysicsParams:
        d = dict(d)
        names = {f.name for f in fields(cls)} - {"inertia"}
        inertia = list(cls.inertia)
        for i, key in enumerate(("inertia_xx", "inertia_yy", "inertia_zz")):
            if key in d:
                inertia[i] = float(d.pop(key))
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown physics keys: {sorted(unknown)}")
        return cls(inertia=tuple(inertia), **{k: float(v) for k, v in d.items()})


def hover_rotor_speed(params: PhysicsParams) -> float:
    """Rotor speed at which four rotors balance gravity."""
    return math.sqrt(params.mass * params.gravity / (4.0 * params.thrust_coeff))


def hover_command(params: PhysicsParams) -> float:
    """Motor command producing :func:`hover_rotor_speed`."""
    return (hover_rotor_speed(params) - params.motor_bias) / params.motor_gain


def motor_map(u, params: PhysicsParams) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.maximum(params.motor_gain * u + params.motor_bias, 0.0)


def mix_forces(w, params: PhysicsParams) -> np.ndarray:
    """Total thrust and body torques from rotor speeds."""
    w2 = np.asarray(w, dtype=float) ** 2
    return squared_speeds_to_wrench(w2, params)


def squared_speeds_to_wrench(w2, params: PhysicsParams) -> np.ndarray:
    ct, cq = params.thrust_coeff, params.torque_coeff
    arm = ct * params.arm_length / SQRT2
    w1, w2_, w3, w4 = w2[..., 0], w2[..., 1], w2[..., 2], w2[..., 3]
    return np.stack([
        ct * (w1 + w2_ + w3 + w4),
        arm * (w1 - w2_ + w3 - w4),
        arm * (-w1 - w2_ + w3 + w4),
        cq * (-w1 + w2_ - w3 + w4),
    ], axis=-1)


def thrusts_to_wrench(thrusts, params: PhysicsParams) -> np.ndarray:
    """Wrench from per-rotor thrusts, with rotor torques ``(C_Q / C_T) * T_i``."""
    T = np.asarray(thrusts, dtype=float)
    return squared_speeds_to_wrench(T / params.thrust_coeff, params)


def mixing_matrix(params: PhysicsParams) -> np.ndarray:
    """The 4x4 map from squared rotor speeds to the wrench."""
    return squared_speeds_to_wrench(np.eye(4), params).T


def derivative_from_wrench(x, wrench, params: PhysicsParams) -> np.ndarray:
    """State derivative given an applied body wrench.

    Raises :class:`GimbalLockError` when the pitch makes the Euler-rate map
    singular.
    """
    x = np.asarray(x, dtype=float)
    wrench = np.asarray(wrench, dtype=float)
    if x.shape[-1] != STATE_DIM or wrench.shape[-1] != 4:
        raise ShapeError(f"bad shapes state {x.shape}, wrench {wrench.shape}")
    eta, omega, v = x[..., ETA], x[..., RATE], x[..., VEL]
    out = np.empty(np.broadcast_shapes(x.shape, wrench.shape[:-1] + (STATE_DIM,)))

    out[..., ETA] = euler_rates(eta, omega)
    out[..., POS] = v

    phi, theta, psi = eta[..., 0], eta[..., 1], eta[..., 2]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    accel = wrench[..., 0] / params.mass
    # third column of Rz Ry Rx times thrust / m
    out[..., 9] = accel * (cp * st * cf + sp * sf) - params.drag_t * v[..., 0]
    out[..., 10] = accel * (sp * st * cf - cp * sf) - params.drag_t * v[..., 1]
    out[..., 11] = accel * (ct * cf) - params.gravity - params.drag_t * v[..., 2]

    ix, iy, iz = params.inertia
    p, q, r = omega[..., 0], omega[..., 1], omega[..., 2]
    kr = params.drag_r
    out[..., 6] = (wrench[..., 1] - (iz - iy) * q * r - kr * p) / ix
    out[..., 7] = (wrench[..., 2] - (ix - iz) * r * p - kr * q) / iy
    out[..., 8] = (wrench[..., 3] - (iy - ix) * p * q - kr * r) / iz
    return out


def state_derivative(x, w, params: PhysicsParams) -> np.ndarray:
    """Continuous-time derivative for rotor speeds ``w``."""
    return derivative_from_wrench(x, mix_forces(w, params), params)


def rk4(f, x, dt: float, substeps: int = 1) -> np.ndarray:
    """Classical fourth-order Runge-Kutta over ``dt`` split into ``substeps``."""
    h = dt / substeps
    for _ in range(substeps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def integrate_wrench_step(x, wrench, dt: float, params: PhysicsParams, substeps: int = SUBSTEPS,
                          correction=None) -> np.ndarray:
    """One step with a wrench (and optional additive derivative term) held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    wrench = np.asarray(wrench, dtype=float)
    if correction is None:
        f = lambda s: derivative_from_wrench(s, wrench, params)  # noqa: E731
    else:
        correction = np.asarray(correction, dtype=float)
        f = lambda s: derivative_from_wrench(s, wrench, params) + correction  # noqa: E731
    with np.errstate(over="ignore", invalid="ignore"):
        out = rk4(f, x, dt, substeps)
    if not np.all(np.isfinite(out)):
        raise NumericFault("integration produced non-finite state")
    return out


def integrate_step(x, u, dt: float, params: PhysicsParams, substeps: int = SUBSTEPS) -> np.ndarray:
    """Advance ``x`` by ``dt`` with motor command ``u`` held (zero-order hold)."""
    wrench = mix_forces(motor_map(u, params), params)
    return integrate_wrench_step(x, wrench, dt, params, substeps)


def physics_rollout(x0, U_f, dt: float, params: PhysicsParams, substeps: int = SUBSTEPS) -> np.ndarray:
    """Truncated states after each of ``F`` steps.

    ``x0`` is ``(..., 12)`` and ``U_f`` is ``(..., F, 4)``; returns ``(..., F, 6)``.
    """
    x = np.asarray(x0, dtype=float)
    U_f = np.asarray(U_f, dtype=float)
    if U_f.ndim < 2 or U_f.shape[-1] != 4 or U_f.shape[-2] < 1:
        raise ShapeError(f"U_f must be (..., F, 4) with F >= 1, got {U_f.shape}")
    out = []
    for k in range(U_f.shape[-2]):
        x = integrate_step(x, U_f[..., k, :], dt, params, substeps)
        out.append(truncate_state(x))
    return np.stack(out, axis=-2)


# ---------------------------------------------------------------------------
# System identification

FREE_PARAMS = ("thrust_coeff", "torque_coeff", "drag_t", "drag_r", "motor_bias")
IDENTIFIABLE = ("thrust_coeff", "torque_coeff", "drag_t", "drag_r", "motor_gain", "motor_bias")


@dataclass
class IdentificationResult:
    params: PhysicsParams
    converged: bool
    iterations: int
    initial_cost: float
    final_cost: float


def _as_arrays(traj):
    if hasattr(traj, "states"):
        return np.asarray(traj.states, dtype=float), np.asarray(traj.controls, dtype=float)
    states, controls = traj
    return np.asarray(states, dtype=float), np.asarray(controls, dtype=float)


def identification_residuals(trajectories, params: PhysicsParams, dt: float = DT) -> np.ndarray:
    """Stacked derivative mismatch over every sample interval.

    The data derivative is the difference quotient over one interval and the
    model is evaluated at the interval midpoint with that interval's command,
    which keeps the comparison second-order accurate under zero-order hold.
    Controls follow the dataset convention: ``controls[k]`` drives
    ``states[k-1] -> states[k]``.
    """
    res = []
    for traj in trajectories:
        X, U = _as_arrays(traj)
        fd = (X[1:] - X[:-1]) / dt
        mid = 0.5 * (X[1:] + X[:-1])
        res.append((fd - state_derivative(mid, motor_map(U[1:], params), params)).ravel())
    return np.concatenate(res)


def identify_params(trajectories, init: PhysicsParams, free=FREE_PARAMS, dt: float = DT,
                    max_iter: int = 200, tol: float = 1e-12) -> IdentificationResult:
    """Levenberg-Marquardt fit of the free parameters to sampled flight data.

    ``free`` defaults to every identifiable parameter except ``motor_gain``:
    the thrust and torque coefficients can be traded against the motor gain
    without changing the dynamics, so freeing both makes the problem
    rank-deficient and is reported as such.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise DataError("identify_params needs at least one trajectory")
    for traj in trajectories:
        X, U = _as_arrays(traj)
        if X.shape[0] < 100 or X.shape != (U.shape[0], STATE_DIM) or U.shape[1] != 4:
            raise DataError("each trajectory needs >= 100 samples of (N,12) states and (N,4) controls")
    free = tuple(free)
    bad = set(free) - set(IDENTIFIABLE)
    if bad or not free:
        raise ConfigError(f"free parameters must be a non-empty subset of {IDENTIFIABLE}, got {free}")

    base = np.array([getattr(init, name) for name in free], dtype=float)
    scale = np.where(base != 0.0, np.abs(base), 1.0)

    def unpack(theta):
        return replace(init, **{name: float(s * t) for name, s, t in zip(free, scale, theta)})

    def residual(theta):
        return identification_residuals(trajectories, unpack(theta), dt)

    def jacobian(theta, r0):
        J = np.empty((r0.size, theta.size))
        for j in range(theta.size):
            h = 1e-6 * max(abs(theta[j]), 1.0)
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            J[:, j] = (residual(tp) - residual(tm)) / (2.0 * h)
        return J

    theta = base / scale
    r = residual(theta)
    cost = float(r @ r)
    initial_cost = cost
    J = jacobian(theta, r)
    _check_rank(J, free)

    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        if np.max(np.abs(g)) <= tol * max(cost, 1e-300) or cost == 0.0:
            converged = True
            break
        accepted = False
        for _ in range(30):
            D = np.diag(np.diag(A)) * lam
            try:
                step = np.linalg.solve(A + D, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            r_trial = residual(trial)
            cost_trial = float(r_trial @ r_trial) if np.all(np.isfinite(r_trial)) else np.inf
            if cost_trial < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        rel_drop = (cost - cost_trial) / max(cost, 1e-300)
        small_step = np.max(np.abs(step)) <= 1e-12 * (np.max(np.abs(theta)) + 1e-12)
        theta, r, cost = trial, r_trial, cost_trial
        lam = max(lam / 3.0, 1e-12)
        if rel_drop < tol or small_step:
            converged = True
            break
        J = jacobian(theta, r)
    if not converged:
        log.warning("identify_params did not converge in %d iterations; returning best so far", max_iter)
    return IdentificationResult(unpack(theta), converged, it, initial_cost, cost)


def _check_rank(J, names, rtol=1e-9):
    norms = np.linalg.norm(J, axis=0)
    dead = [n for n, c in zip(names, norms) if c <= 1e-12 * max(np.max(norms), 1e-300) or c == 0.0]
    if dead:
        raise RankDeficientError(f"parameters not excited by the data: {dead}")
    s = np.linalg.svd(J / norms, compute_uv=False)
    if s[-1] <= rtol * s[0]:
        raise RankDeficientError(
            f"identification Jacobian is rank-deficient (condition {s[0] / max(s[-1], 1e-300):.3g}) "
            f"for free parameters {list(names)}"
        )
