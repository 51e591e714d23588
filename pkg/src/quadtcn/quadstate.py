"""State layout, rotation kinematics and augmented sequences.

A quadrotor state is a 12-vector ``[eta, r, xi, v]``:

* ``eta`` roll/pitch/yaw Euler angles (rad), stored unwrapped,
* ``r`` world-frame position (m),
* ``xi`` body angular velocity omega (rad/s),
* ``v`` world-frame velocity (m/s).

Arrays use a trailing axis of length 12 so every helper broadcasts over
leading batch/time axes. The body-to-world rotation is
``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

STATE_DIM = 12
CONTROL_DIM = 4
AUGMENTED_DIM = STATE_DIM + CONTROL_DIM
TRUNCATED_DIM = 6

ETA = slice(0, 3)
POS = slice(3, 6)
RATE = slice(6, 9)
VEL = slice(9, 12)

STATE_NAMES = ("roll", "pitch", "yaw", "x", "y", "z", "wx", "wy", "wz", "vx", "vy", "vz")
CONTROL_NAMES = ("u1", "u2", "u3", "u4")
TRUNCATED_NAMES = ("wx", "wy", "wz", "vx", "vy", "vz")

# |cos(pitch)| at or below this is treated as gimbal lock
SINGULARITY_TOL = 1e-6


@dataclass(frozen=True)
class QuadState:
    """One timestep of the 12-dimensional state."""

    eta: np.ndarray
    r: np.ndarray
    xi: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("eta", "r", "xi", "v"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (3,):
                raise ShapeError(f"QuadState.{name} must have shape (3,), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"QuadState.{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_vector(cls, x) -> QuadState:
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ShapeError(f"state vector must have shape (12,), got {x.shape}")
        return cls(x[ETA], x[POS], x[RATE], x[VEL])

    @classmethod
    def zeros(cls) -> QuadState:
        return cls.from_vector(np.zeros(STATE_DIM))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.r, self.xi, self.v])

    def __array__(self, dtype=None, copy=None):
        out = self.to_vector()
        return out if dtype is None else out.astype(dtype)


@dataclass(frozen=True)
class ControlInput:
    """Four non-negative motor commands."""

    u: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.u, dtype=float)
        if arr.shape != (CONTROL_DIM,):
            raise ShapeError(f"ControlInput must have shape (4,), got {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("motor commands must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "u", arr)

    def __array__(self, dtype=None, copy=None):
        out = np.array(self.u)
        return out if dtype is None else out.astype(dtype)


def rotation_body_to_world(eta) -> np.ndarray:
    """Rotation matrix ``Rz(psi) Ry(theta) Rx(phi)`` for angles ``(phi, theta, psi)``.

    Accepts ``(..., 3)`` and returns ``(..., 3, 3)``.
    """
    eta = np.asarray(eta, dtype=float)
    phi, theta, psi = eta[..., 0], eta[..., 1], eta[..., 2]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty(eta.shape[:-1] + (3, 3))
    R[..., 0, 0] = cp * ct
    R[..., 0, 1] = cp * st * sf - sp * cf
    R[..., 0, 2] = cp * st * cf + sp * sf
    R[..., 1, 0] = sp * ct
    R[..., 1, 1] = sp * st * sf + cp * cf
    R[..., 1, 2] = sp * st * cf - cp * sf
    R[..., 2, 0] = -st
    R[..., 2, 1] = ct * sf
    R[..., 2, 2] = ct * cf
    return R


def euler_rate_matrix(eta) -> np.ndarray:
    """The Euler-rate coupling matrix.

    Rows are ``[1, 0, -sin(theta)]``, ``[0, cos(phi), sin(phi) cos(theta)]`` and
    ``[0, -sin(phi), cos(phi) cos(theta)]``; the determinant is ``cos(theta)``.
    For the ZYX rotation above this matrix maps Euler-angle rates to body
    rates, so recovering angle rates from omega solves against it (see
    :func:`euler_rates`).
    """
    eta = np.asarray(eta, dtype=float)
    phi, theta = eta[..., 0], eta[..., 1]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    E = np.zeros(eta.shape[:-1] + (3, 3))
    E[..., 0, 0] = 1.0
    E[..., 0, 2] = -st
    E[..., 1, 1] = cf
    E[..., 1, 2] = sf * ct
    E[..., 2, 1] = -sf
    E[..., 2, 2] = cf * ct
    return E


def check_gimbal(eta) -> None:
    """Raise :class:`GimbalLockError` if any pitch is within the singular band."""
    from .errors import GimbalLockError

    ct = np.cos(np.asarray(eta, dtype=float)[..., 1])
    if np.any(np.abs(ct) <= SINGULARITY_TOL):
        raise GimbalLockError(
            f"gimbal lock: |cos(pitch)| = {np.min(np.abs(ct)):.3g} <= {SINGULARITY_TOL}"
        )


def euler_rates(eta, omega) -> np.ndarray:
    """Euler-angle rates for body rates ``omega`` (closed-form inverse of the rate matrix)."""
    eta = np.asarray(eta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    check_gimbal(eta)
    phi, theta = eta[..., 0], eta[..., 1]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    p, q, r = omega[..., 0], omega[..., 1], omega[..., 2]
    yz = q * sf + r * cf
    return np.stack([p + yz * tt, q * cf - r * sf, yz / ct], axis=-1)


def augment_sequence(X_p, U_p, U_f) -> np.ndarray:
    """Build the ``16 x (P+F)`` network input.

    Past columns are ``[eta r xi v u]``; future columns carry zeros in the 12
    state rows and the future control in the last four.
    """
    X_p = np.asarray(X_p, dtype=float)
    U_p = np.asarray(U_p, dtype=float)
    U_f = np.asarray(U_f, dtype=float)
    if X_p.ndim != 2 or X_p.shape[1] != STATE_DIM:
        raise ShapeError(f"X_p must be (P, 12), got {X_p.shape}")
    if U_p.shape != (X_p.shape[0], CONTROL_DIM):
        raise ShapeError(f"U_p must be ({X_p.shape[0]}, 4), got {U_p.shape}")
    if U_f.ndim != 2 or U_f.shape[1] != CONTROL_DIM or U_f.shape[0] < 1:
        raise ShapeError(f"U_f must be (F, 4) with F >= 1, got {U_f.shape}")
    if X_p.shape[0] < 1:
        raise ShapeError("need at least one past step")
    for name, arr in (("X_p", X_p), ("U_p", U_p), ("U_f", U_f)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} has non-finite entries")
    P, F = X_p.shape[0], U_f.shape[0]
    out = np.zeros((AUGMENTED_DIM, P + F))
    out[:STATE_DIM, :P] = X_p.T
    out[STATE_DIM:, :P] = U_p.T
    out[STATE_DIM:, P:] = U_f.T
    return out


def truncate_state(x) -> np.ndarray:
    """Project a state (or ``(..., 12)`` array) onto the labels ``[xi, v]``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != STATE_DIM:
        raise ShapeError(f"state must have trailing dimension 12, got {x.shape}")
    return x[..., 6:12].copy()


def embed_truncated(y) -> np.ndarray:
    """Inverse of :func:`truncate_state` with zero angles and position."""
    y = np.asarray(y, dtype=float)
    x = np.zeros(y.shape[:-1] + (STATE_DIM,))
    x[..., 6:12] = y
    return x
