"""Hybrid predictors that splice learned components into the physics integrator.

* Motor-Hybrid: a TCN predicts per-rotor thrusts, which replace the quadratic
  rotor model; rotor torques follow as ``(C_Q / C_T) * T_i``.
* AccelError-Hybrid: a TCN predicts an additive correction to the 12-channel
  physics state derivative.
* Combined-Hybrid: both at once.

A component is any callable ``f(hist_states, hist_controls, u_next)`` with
``hist_states (..., H, 12)``, ``hist_controls (..., H, 4)``, ``u_next (..., 4)``
returning ``(..., C_out)`` in physical units. :class:`TCNComponent` is the
learned implementation; tests substitute closed-form stand-ins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import physics
from .dataset import NormStats, fit_norm_stats
from .errors import ConfigError, DataError, ShapeError
from .physics import PhysicsParams
from .quadstate import AUGMENTED_DIM, STATE_DIM, rotation_body_to_world, truncate_state
from .tcn import TCN, ArrayDataset, NetworkConfig, fit, param_count, predict
from .tcn.network import init_params

VARIANTS = ("motor", "accel", "combined")
KIND_TAGS = {"motor": "motor-hybrid", "accel": "accel-hybrid", "combined": "combined-hybrid"}
MOTOR_OUT = 4
ACCEL_OUT = STATE_DIM


@dataclass(frozen=True)
class HybridConfig:
    variant: str
    motor_net: NetworkConfig | None = None
    accel_net: NetworkConfig | None = None
    params: PhysicsParams = PhysicsParams()
    dt: float = physics.DT
    substeps: int = physics.SUBSTEPS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"hybrid variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.uses_motor:
            _check_component(self.motor_net, MOTOR_OUT, "motor")
        if self.uses_accel:
            _check_component(self.accel_net, ACCEL_OUT, "accel")

    @property
    def uses_motor(self) -> bool:
        return self.variant in ("motor", "combined")

    @property
    def uses_accel(self) -> bool:
        return self.variant in ("accel", "combined")

    @property
    def history(self) -> int:
        return max(c.past_steps for c in (self.motor_net, self.accel_net) if c is not None)

    @property
    def kind(self) -> str:
        return KIND_TAGS[self.variant]


def _check_component(cfg, out_channels, name):
    if cfg is None:
        raise ConfigError(f"{name} network config required for this hybrid variant")
    if cfg.output_channels != out_channels or cfg.input_channels != AUGMENTED_DIM or cfg.future_steps != 1:
        raise ConfigError(
            f"{name} network must map {AUGMENTED_DIM} channels to {out_channels} with future_steps = 1"
        )


def component_config(base: NetworkConfig, history: int, out_channels: int, **changes) -> NetworkConfig:
    """Derive a single-step component config from an End2End-style base config."""
    kw = dict(past_steps=history, future_steps=1, output_channels=out_channels, shortened_gradient=False,
              loss_kind="L2", wl2_weights=(1.0,) * out_channels)
    kw.update(changes)
    return base.replace(**kw)


def component_param_count(cfg: NetworkConfig) -> int:
    return param_count(init_params(cfg)[0])


def match_parameter_budget(reference: NetworkConfig, variant: str, history: int, tol: float = 0.05,
                           template: NetworkConfig | None = None):
    """Pick one channel width for the hybrid's TCN(s) so their parameters total the reference's.

    ``template`` supplies depth and kernel size of the components (default:
    the reference). Returns ``(motor_cfg, accel_cfg, relative_gap)``; unused
    components are ``None``.
    """
    template = template or reference
    target = component_param_count(reference)
    best = None
    for width in range(1, 1025):
        motor = component_config(template, history, MOTOR_OUT, channels=width) \
            if variant in ("motor", "combined") else None
        accel = component_config(template, history, ACCEL_OUT, channels=width) \
            if variant in ("accel", "combined") else None
        total = sum(component_param_count(c) for c in (motor, accel) if c is not None)
        gap = abs(total - target) / target
        if best is None or gap < best[2]:
            best = (motor, accel, gap)
        if total > target:
            break
    if best[2] > tol:
        raise ConfigError(f"cannot match parameter budget {target} within {tol:.0%} (best gap {best[2]:.1%})")
    return best


# ---------------------------------------------------------------------------
# Learned component


class TCNComponent:
    """A TCN evaluated on the last ``H`` augmented states plus the next control."""

    def __init__(self, model: TCN, stats: NormStats, out_mean, out_std):
        self.model = model
        self.stats = stats
        self.out_mean = np.asarray(out_mean, dtype=float)
        self.out_std = np.asarray(out_std, dtype=float)

    @property
    def history(self) -> int:
        return self.model.config.past_steps

    def inputs(self, hist_states, hist_controls, u_next) -> np.ndarray:
        H = self.history
        hs = np.asarray(hist_states, dtype=float)
        hc = np.asarray(hist_controls, dtype=float)
        un = np.asarray(u_next, dtype=float)
        if hs.shape[-2] < H or hc.shape[-2] < H:
            raise ShapeError(f"history of {hs.shape[-2]} steps is shorter than the required {H}")
        hs, hc = hs[..., -H:, :], hc[..., -H:, :]
        lead = hs.shape[:-2]
        X = np.zeros(lead + (AUGMENTED_DIM, H + 1))
        X[..., :STATE_DIM, :H] = np.swapaxes(self.stats.normalize_states(hs), -1, -2)
        X[..., STATE_DIM:, :H] = np.swapaxes(self.stats.normalize_controls(hc), -1, -2)
        X[..., STATE_DIM:, H] = self.stats.normalize_controls(un)
        return X

    def __call__(self, hist_states, hist_controls, u_next) -> np.ndarray:
        X = self.inputs(hist_states, hist_controls, u_next)
        lead = X.shape[:-2]
        flat = X.reshape((-1,) + X.shape[-2:])
        z = self.model(flat, mode="eval")[:, :, -1].astype(float)
        return (z * self.out_std + self.out_mean).reshape(lead + (-1,))


# ---------------------------------------------------------------------------
# Steps and rollouts


def motor_hybrid_step(hist_states, hist_controls, u_next, x, motor, params: PhysicsParams,
                      dt: float = physics.DT, substeps: int = physics.SUBSTEPS):
    thrusts = motor(hist_states, hist_controls, u_next)
    wrench = physics.thrusts_to_wrench(thrusts, params)
    return physics.integrate_wrench_step(x, wrench, dt, params, substeps)


def accel_error_hybrid_step(hist_states, hist_controls, u_next, x, accel, params: PhysicsParams,
                            dt: float = physics.DT, substeps: int = physics.SUBSTEPS):
    correction = accel(hist_states, hist_controls, u_next)
    wrench = physics.mix_forces(physics.motor_map(u_next, params), params)
    return physics.integrate_wrench_step(x, wrench, dt, params, substeps, correction=correction)


def combined_hybrid_step(hist_states, hist_controls, u_next, x, motor, accel, params: PhysicsParams,
                         dt: float = physics.DT, substeps: int = physics.SUBSTEPS):
    wrench = physics.thrusts_to_wrench(motor(hist_states, hist_controls, u_next), params)
    correction = accel(hist_states, hist_controls, u_next)
    return physics.integrate_wrench_step(x, wrench, dt, params, substeps, correction=correction)


def hybrid_step(config: HybridConfig, components: dict, hist_states, hist_controls, u_next, x):
    p, dt, n = config.params, config.dt, config.substeps
    if config.variant == "motor":
        return motor_hybrid_step(hist_states, hist_controls, u_next, x, components["motor"], p, dt, n)
    if config.variant == "accel":
        return accel_error_hybrid_step(hist_states, hist_controls, u_next, x, components["accel"], p, dt, n)
    return combined_hybrid_step(hist_states, hist_controls, u_next, x, components["motor"],
                                components["accel"], p, dt, n)


def hybrid_rollout(X_p, U_p, U_f, config: HybridConfig, components: dict) -> np.ndarray:
    """Sequential ``F``-step prediction feeding each predicted state back in.

    ``X_p (..., P, 12)``, ``U_p (..., P, 4)``, ``U_f (..., F, 4)``; returns ``(..., F, 6)``.
    """
    hs = np.asarray(X_p, dtype=float)
    hc = np.asarray(U_p, dtype=float)
    U_f = np.asarray(U_f, dtype=float)
    if hs.shape[-2] < config.history:
        raise ShapeError(f"need at least {config.history} past steps, got {hs.shape[-2]}")
    H = config.history
    hs, hc = hs[..., -H:, :], hc[..., -H:, :]
    x = hs[..., -1, :]
    out = []
    for k in range(U_f.shape[-2]):
        u = U_f[..., k, :]
        x = hybrid_step(config, components, hs, hc, u, x)
        out.append(truncate_state(x))
        hs = np.concatenate([hs[..., 1:, :], x[..., None, :]], axis=-2)
        hc = np.concatenate([hc[..., 1:, :], u[..., None, :]], axis=-2)
    return np.stack(out, axis=-2)


# ---------------------------------------------------------------------------
# Teacher-forced training targets


def inferred_wrench(x0, x1, params: PhysicsParams, dt: float) -> np.ndarray:
    """Body wrench that explains the interval ``x0 -> x1`` at its midpoint (inverse dynamics)."""
    mid = 0.5 * (x0 + x1)
    d = (x1 - x0) / dt
    R = rotation_body_to_world(mid[..., 0:3])
    g = np.array([0.0, 0.0, params.gravity])
    force = params.mass * (d[..., 9:12] + g + params.drag_t * mid[..., 9:12])
    thrust = np.einsum("...i,...i->...", R[..., :, 2], force)
    inertia = np.asarray(params.inertia)
    w = mid[..., 6:9]
    tau = inertia * d[..., 6:9] + np.cross(w, inertia * w) + params.drag_r * w
    return np.concatenate([thrust[..., None], tau], axis=-1)


def single_step_samples(trajs, history: int, stride: int = 1):
    """Histories, next controls and transitions for teacher-forced component training."""
    hs, hc, un, x0, x1 = [], [], [], [], []
    for traj in trajs:
        X, U = traj.states, traj.controls
        for k in range(history - 1, len(X) - 1, stride):
            hs.append(X[k - history + 1:k + 1])
            hc.append(U[k - history + 1:k + 1])
            un.append(U[k + 1])
            x0.append(X[k])
            x1.append(X[k + 1])
    if not hs:
        raise DataError("trajectories too short for the requested hybrid history")
    return tuple(np.stack(a) for a in (hs, hc, un, x0, x1))


def _fit_component(cfg, stats, hs, hc, un, targets, epochs, batch_size, lr, seed):
    mean = targets.mean(axis=0)
    std = targets.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    model = TCN(cfg)
    comp = TCNComponent(model, stats, mean, std)
    X = comp.inputs(hs, hc, un).astype(cfg.dtype)
    Y = ((targets - mean) / std)[:, :, None].astype(cfg.dtype)
    losses = fit(ArrayDataset(X, Y), model, epochs, batch_size, lr, seed)
    return comp, losses


def train_hybrid(trajs, config: HybridConfig, epochs: int, batch_size: int = 32, lr: float = 1e-3,
                 seed: int = 0, stride: int = 1, stats: NormStats | None = None):
    """Train the variant's TCN component(s) on single-step targets.

    Motor targets are the minimum-norm per-rotor thrusts reproducing the
    inferred wrench (the mixing matrix has rank 3, so thrusts are only
    determined up to its null space). Correction targets are the measured
    derivative minus the physics derivative, computed after the motor
    component for the combined variant. Returns ``(components, losses)``.
    """
    trajs = list(trajs)
    stats = stats or fit_norm_stats(trajs)
    p = config.params
    hs, hc, un, x0, x1 = single_step_samples(trajs, config.history, stride)
    components, losses = {}, {}
    wrench_data = inferred_wrench(x0, x1, p, config.dt)
    thrust_map = np.linalg.pinv(physics.mixing_matrix(p) / p.thrust_coeff)
    motor_wrench = None
    if config.uses_motor:
        targets = wrench_data @ thrust_map.T
        components["motor"], losses["motor"] = _fit_component(
            config.motor_net, stats, hs, hc, un, targets, epochs, batch_size, lr, seed)
        motor_wrench = physics.thrusts_to_wrench(components["motor"](hs, hc, un), p)
    if config.uses_accel:
        mid = 0.5 * (x0 + x1)
        d = (x1 - x0) / config.dt
        if motor_wrench is None:
            motor_wrench = physics.mix_forces(physics.motor_map(un, p), p)
        targets = d - physics.derivative_from_wrench(mid, motor_wrench, p)
        components["accel"], losses["accel"] = _fit_component(
            config.accel_net, stats, hs, hc, un, targets, epochs, batch_size, lr, seed + 1)
    return components, losses


def total_parameters(components: dict) -> int:
    return sum(c.model.num_parameters() for c in components.values() if isinstance(c, TCNComponent))


__all__ = [
    "HybridConfig", "TCNComponent", "motor_hybrid_step", "accel_error_hybrid_step", "combined_hybrid_step",
    "hybrid_step", "hybrid_rollout", "train_hybrid", "match_parameter_budget", "component_config",
    "inferred_wrench", "single_step_samples", "total_parameters",
]
