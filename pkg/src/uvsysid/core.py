"""State layout, ZYX rotation kinematics and the shared time-stepping contract.

State vectors are flat float64 arrays of length 12::

    [x, y, z, phi, theta, psi, u, v, w, p, q, r]
     position   attitude      linear    angular
     (inertial) (ZYX Euler)   (body)    (body)

The frame convention is the marine NED one (z positive down).  Attitude
kinematics use the small roll/pitch approximation ``d(mu)/dt = omega``; every
model and every integrator in the package shares that choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SingularityError

N_STATE = 12
N_TWIST = 6

POS = slice(0, 3)
ATT = slice(3, 6)
LIN = slice(6, 9)
ANG = slice(9, 12)
POSE = slice(0, 6)
TWIST = slice(6, 12)
ANGLE_IDX = (3, 4, 5)

STATE_NAMES = ("x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r")

# |theta| must stay strictly below pi/2 - GIMBAL_MARGIN
GIMBAL_MARGIN = 0.1


def pitch_limit(margin=GIMBAL_MARGIN):
    return 0.5 * np.pi - margin


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi].

    Values already inside the interval are returned untouched, which makes the
    function exactly idempotent in floating point.
    """
    a = np.asarray(a, dtype=float)
    inside = (a > -np.pi) & (a <= np.pi)
    w = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    # np.mod can round up to 2*pi for tiny negative arguments
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    out = np.where(inside, a, w)
    return out if out.ndim else float(out)


def angle_diff(a, b):
    """Wrapped difference ``a - b`` in (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def state_error(x_true, x_pred):
    """Endpoint error ``x_true - x_pred`` with wrapped attitude components."""
    e = np.asarray(x_true, dtype=float) - np.asarray(x_pred, dtype=float)
    e[..., ATT] = wrap_angle(e[..., ATT])
    return e


def euler_to_rotation(mu):
    """Body-to-inertial rotation ``Rz(psi) @ Ry(theta) @ Rx(phi)``.

    ``mu`` may carry leading batch dimensions; the result has shape
    ``mu.shape[:-1] + (3, 3)``.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape[-1] != 3:
        raise InvalidInputError(f"expected Euler triple(s), got shape {mu.shape}")
    if not np.all(np.isfinite(mu)):
        raise InvalidInputError("non-finite Euler angles")
    phi, theta, psi = mu[..., 0], mu[..., 1], mu[..., 2]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty(mu.shape[:-1] + (3, 3))
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


def check_gimbal(x, margin=GIMBAL_MARGIN):
    theta = np.asarray(x, dtype=float)[..., 4]
    bad = np.abs(theta) >= pitch_limit(margin)
    if np.any(bad):
        worst = float(np.max(np.abs(theta)))
        raise SingularityError(
            f"|pitch| = {worst:.4f} rad reached the gimbal guard ({pitch_limit(margin):.4f} rad)"
        )


def pose_rates(x):
    """Pose derivative ``[R(mu) v, omega]`` under the small-angle kinematics."""
    x = np.asarray(x, dtype=float)
    R = euler_to_rotation(x[..., ATT])
    dp = np.einsum("...ij,...j->...i", R, x[..., LIN])
    return np.concatenate([dp, x[..., ANG]], axis=-1)


def _as_vector(state):
    if isinstance(state, VehicleState):
        return state.vector.copy(), True
    return np.array(state, dtype=float), False


def kinematic_step(state, dt, margin=GIMBAL_MARGIN):
    """Advance the pose by one explicit step, leaving the twist alone.

    ``p += dt * R(mu) v`` and ``mu += dt * omega``; angles are re-wrapped.
    Works on a single state or on a ``(..., 12)`` batch.
    """
    if dt < 0:
        raise InvalidInputError("dt must be non-negative")
    x, wrap_result = _as_vector(state)
    out = x.copy()
    out[..., POSE] = x[..., POSE] + dt * pose_rates(x)
    out[..., ATT] = wrap_angle(out[..., ATT])
    check_gimbal(out, margin)
    return VehicleState(out, margin) if wrap_result else out


def check_inputs(u, m=None):
    u = np.asarray(u, dtype=float)
    if m is not None and u.shape[-1] != m:
        raise InvalidInputError(f"expected {m} input channels, got {u.shape[-1]}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("non-finite control input")
    if np.any(np.abs(u) > 1.0):
        raise InvalidInputError("control channels must lie in [-1, 1]")
    return u


@dataclass(frozen=True, init=False)
class VehicleState:
    """Validated, immutable 12-entry vehicle state.

    Most of the package works with raw arrays; this wrapper exists for the
    boundaries where the invariants matter (ingestion, user-facing calls).
    """

    vector: np.ndarray

    def __init__(self, vector, margin=GIMBAL_MARGIN):
        v = np.array(vector, dtype=float).reshape(-1)
        if v.shape != (N_STATE,):
            raise InvalidInputError(f"state must have {N_STATE} entries, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("state entries must be finite")
        v[ATT] = wrap_angle(v[ATT])
        check_gimbal(v, margin)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_parts(cls, position=(0, 0, 0), attitude=(0, 0, 0), linear=(0, 0, 0), angular=(0, 0, 0)):
        return cls(np.concatenate([position, attitude, linear, angular]).astype(float))

    @property
    def position(self):
        return self.vector[POS]

    @property
    def attitude(self):
        return self.vector[ATT]

    @property
    def linear(self):
        return self.vector[LIN]

    @property
    def angular(self):
        return self.vector[ANG]

    @property
    def twist(self):
        return self.vector[TWIST]

    def __array__(self, dtype=None, copy=None):
        return self.vector.astype(dtype) if dtype is not None else self.vector.copy()

    def __eq__(self, other):
        if not isinstance(other, VehicleState):
            return NotImplemented
        return bool(np.array_equal(self.vector, other.vector))

    def __hash__(self):
        return hash(self.vector.tobytes())
