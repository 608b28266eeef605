"""Fossen 6-DoF vehicle model, the body-frame double integrator, integrators
and the synthetic-data generator.

Conventions: NED inertial frame (z down), ZYX Euler angles, small-angle
attitude kinematics (see :mod:`uvsysid.core`).  The Fossen model is

    M nu_dot + C(nu) nu + D(nu) nu + g(eta) = w(u)

with ``M = M_RB + M_A``, ``C = C_RB + C_A`` in the velocity-independent
skew-symmetric form, ``D(nu) = D_lin + diag(D_quad * |nu|)`` and the
actuated wrench ``w(u) = T @ (gain * u + offset)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.signal

from . import container, core, kernels
from .errors import ConfigError, DivergenceError, InvalidInputError, NumericError, ParameterError
from .ingest import Dataset, Segment
from .ridge import ridge_solve

PARAMS_VERSION = 1
GRAVITY = 9.81


def skew(a):
    a = np.asarray(a, dtype=float)
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def rigid_body_inertia(mass, r_g, inertia_cg):
    """``M_RB`` about the body origin for a CG offset ``r_g``."""
    S = skew(r_g)
    I_o = np.asarray(inertia_cg, dtype=float) - mass * S @ S
    return np.block([[mass * np.eye(3), -mass * S], [mass * S, I_o]])


def coriolis_matrix(M, nu):
    """Skew-symmetric Coriolis-centripetal matrix generated by inertia ``M``.

    Works for both ``C_RB`` (from ``M_RB``) and ``C_A`` (from ``M_A``);
    ``nu @ C @ nu == 0`` by construction.
    """
    M = np.asarray(M, dtype=float)
    nu = np.asarray(nu, dtype=float)
    a = M[:3, :3] @ nu[:3] + M[:3, 3:] @ nu[3:]
    b = M[3:, :3] @ nu[:3] + M[3:, 3:] @ nu[3:]
    Z = np.zeros((3, 3))
    return np.block([[Z, -skew(a)], [-skew(a), -skew(b)]])


@dataclass(frozen=True)
class FossenParams:
    mass: float
    buoyancy: float
    r_g: np.ndarray
    r_b: np.ndarray
    inertia: np.ndarray
    added_mass: np.ndarray
    linear_damping: np.ndarray
    quadratic_damping: np.ndarray
    allocation: np.ndarray
    thrust_gain: np.ndarray
    thrust_offset: np.ndarray
    gravity: float = GRAVITY
    placeholder: bool = False
    description: str = ""

    def __post_init__(self):
        conv = {
            "r_g": (3,),
            "r_b": (3,),
            "inertia": (3, 3),
            "added_mass": (6, 6),
            "linear_damping": (6, 6),
            "quadratic_damping": (6,),
        }
        for name, shape in conv.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ParameterError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        T = np.array(self.allocation, dtype=float)
        if T.ndim != 2 or T.shape[0] != 6:
            raise ParameterError(f"allocation must be 6 x m, got {T.shape}")
        object.__setattr__(self, "allocation", T)
        m = T.shape[1]
        for name in ("thrust_gain", "thrust_offset"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size == 1:
                arr = np.full(m, arr.item())
            if arr.shape != (m,):
                raise ParameterError(f"{name} must have {m} entries")
            object.__setattr__(self, name, arr)
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, (np.ndarray, float, int)) and not isinstance(v, bool):
                if not np.all(np.isfinite(v)):
                    raise ParameterError(f"{name} contains non-finite values")
        M = self.M
        if not np.allclose(M, M.T, rtol=0, atol=1e-9 * max(1.0, np.abs(M).max())):
            raise ParameterError("inertia matrix M = M_RB + M_A must be symmetric")
        if np.linalg.eigvalsh(0.5 * (M + M.T)).min() <= 0:
            raise ParameterError("inertia matrix M = M_RB + M_A must be positive definite")
        Dl = self.linear_damping
        if np.linalg.eigvalsh(0.5 * (Dl + Dl.T)).min() < -1e-12 or np.any(self.quadratic_damping < 0):
            raise ParameterError("damping must be dissipative")

    @property
    def n_inputs(self):
        return self.allocation.shape[1]

    @property
    def M_RB(self):
        return rigid_body_inertia(self.mass, self.r_g, self.inertia)

    @property
    def M_A(self):
        return self.added_mass

    @property
    def M(self):
        return self.M_RB + self.M_A

    @property
    def weight(self):
        return self.mass * self.gravity

    def C_RB(self, nu):
        return coriolis_matrix(self.M_RB, nu)

    def C_A(self, nu):
        return coriolis_matrix(self.M_A, nu)

    def C(self, nu):
        return self.C_RB(nu) + self.C_A(nu)

    def D(self, nu):
        return self.linear_damping + np.diag(self.quadratic_damping * np.abs(np.asarray(nu, dtype=float)))

    def g(self, eta):
        """Restoring forces (NED, Fossen's formula for a vehicle with weight
        ``W`` at ``r_g`` and buoyancy ``B`` at ``r_b``)."""
        phi, theta = float(eta[3]), float(eta[4])
        W, B = self.weight, self.buoyancy
        xg, yg, zg = self.r_g
        xb, yb, zb = self.r_b
        cf, sf, ct, st = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta)
        return np.array(
            [
                (W - B) * st,
                -(W - B) * ct * sf,
                -(W - B) * ct * cf,
                -(yg * W - yb * B) * ct * cf + (zg * W - zb * B) * ct * sf,
                (zg * W - zb * B) * st + (xg * W - xb * B) * ct * cf,
                -(xg * W - xb * B) * ct * sf - (yg * W - yb * B) * st,
            ]
        )

    def wrench(self, u):
        return self.allocation @ (self.thrust_gain * np.asarray(u, dtype=float) + self.thrust_offset)

    def packed(self):
        """Arrays in the order the kernels expect."""
        M = self.M
        rest = np.array([self.weight, self.buoyancy, *self.r_g, *self.r_b])
        return (
            np.ascontiguousarray(np.linalg.inv(M)),
            np.ascontiguousarray(M),
            np.ascontiguousarray(self.linear_damping),
            np.ascontiguousarray(self.quadratic_damping),
            rest,
            np.ascontiguousarray(self.allocation),
            np.ascontiguousarray(self.thrust_gain),
            np.ascontiguousarray(self.thrust_offset),
        )

    # -- config I/O --------------------------------------------------------

    def to_dict(self):
        return {
            "version": PARAMS_VERSION,
            "kind": "fossen-params",
            "placeholder": self.placeholder,
            "description": self.description,
            "mass": self.mass,
            "buoyancy": self.buoyancy,
            "gravity": self.gravity,
            "r_g": self.r_g.tolist(),
            "r_b": self.r_b.tolist(),
            "inertia": self.inertia.tolist(),
            "added_mass": self.added_mass.tolist(),
            "linear_damping": self.linear_damping.tolist(),
            "quadratic_damping": self.quadratic_damping.tolist(),
            "allocation": self.allocation.tolist(),
            "thrust_gain": self.thrust_gain.tolist(),
            "thrust_offset": self.thrust_offset.tolist(),
        }

    @classmethod
    def from_dict(cls, raw):
        if "version" not in raw:
            raise ConfigError("Fossen parameter file has no 'version' key")
        if raw["version"] != PARAMS_VERSION:
            raise ConfigError(f"unsupported Fossen parameter version {raw['version']}")
        keys = [
            "mass",
            "buoyancy",
            "r_g",
            "r_b",
            "inertia",
            "added_mass",
            "linear_damping",
            "quadratic_damping",
            "allocation",
            "thrust_gain",
        ]
        missing = [k for k in keys if raw.get(k) is None]
        if missing:
            raise ConfigError(f"Fossen parameter file lacks values for: {', '.join(missing)}")
        kwargs = {k: raw[k] for k in keys}
        kwargs["thrust_offset"] = raw.get("thrust_offset") or 0.0
        kwargs["gravity"] = raw.get("gravity", GRAVITY)
        kwargs["placeholder"] = bool(raw.get("placeholder", False))
        kwargs["description"] = raw.get("description", "")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid Fossen parameters: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"parameter file not found: {path}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read parameter file {path}: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def bluerov2_heavy_allocation():
    """6 x 8 allocation of the vectored BlueROV2 Heavy frame (approximate
    geometry): four horizontal thrusters at 45 degrees, four vertical ones."""
    c = np.sqrt(0.5)
    horiz_pos = [(0.156, 0.111, 0.085), (0.156, -0.111, 0.085), (-0.156, 0.111, 0.085), (-0.156, -0.111, 0.085)]
    horiz_dir = [(c, -c, 0.0), (c, c, 0.0), (c, c, 0.0), (c, -c, 0.0)]
    vert_pos = [(0.120, 0.218, 0.0), (0.120, -0.218, 0.0), (-0.120, 0.218, 0.0), (-0.120, -0.218, 0.0)]
    vert_dir = [(0.0, 0.0, 1.0)] * 4
    cols = []
    for r, d in zip(horiz_pos + vert_pos, horiz_dir + vert_dir):
        cols.append(np.concatenate([d, np.cross(r, d)]))
    return np.array(cols).T


def default_params():
    """The packaged placeholder BlueROV2 Heavy parameter set.

    The values are physically plausible but flagged ``placeholder``; load a
    validated identification with :meth:`FossenParams.load` for real work.
    """
    text = resources.files("uvsysid.data").joinpath("bluerov2_heavy_placeholder.json").read_text()
    return FossenParams.from_dict(json.loads(text))


def perturb_params(params, rel=0.2, seed=0):
    """Scale every non-zero damping and added-mass entry by ``1 +/- rel``
    (random sign per entry, symmetric pairs share a sign)."""
    rng = np.random.default_rng(seed)

    def sym_factors(n):
        s = rng.choice([-1.0, 1.0], size=(n, n))
        s = np.triu(s) + np.triu(s, 1).T
        return 1.0 + rel * s

    MA = params.added_mass * sym_factors(6)
    Dl = params.linear_damping * sym_factors(6)
    Dq = params.quadratic_damping * (1.0 + rel * rng.choice([-1.0, 1.0], size=6))
    return replace(
        params,
        added_mass=MA,
        linear_damping=Dl,
        quadratic_damping=Dq,
        placeholder=params.placeholder,
        description=f"{params.description} [perturbed +/-{rel:g}, seed {seed}]".strip(),
    )


def with_extra_quadratic_drag(params, coeffs):
    """Copy of ``params`` with ``coeffs`` added to the quadratic damping."""
    return replace(params, quadratic_damping=params.quadratic_damping + np.asarray(coeffs, dtype=float))


def fossen_accel(params, state, u):
    """Twist derivative ``M^-1 (w(u) - C(nu) nu - D(nu) nu - g(eta))``."""
    x = np.asarray(state, dtype=float)
    core.check_gimbal(x)
    nu = x[core.TWIST]
    rhs = params.wrench(u) - params.C(nu) @ nu - params.D(nu) @ nu - params.g(x[core.POSE])
    try:
        return np.linalg.solve(params.M, rhs)
    except np.linalg.LinAlgError as exc:
        raise ParameterError(f"singular inertia matrix: {exc}") from exc


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def euler_step(field_fn, x, u, dt):
    return np.asarray(x, dtype=float) + dt * np.asarray(field_fn(x, u), dtype=float)


def rk4_step(field_fn, x, u, dt):
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(field_fn(x, u), dtype=float)
    k2 = np.asarray(field_fn(x + 0.5 * dt * k1, u), dtype=float)
    k3 = np.asarray(field_fn(x + 0.5 * dt * k2, u), dtype=float)
    k4 = np.asarray(field_fn(x + dt * k3, u), dtype=float)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_euler(f, state, u, dt):
    """One explicit Euler step: twist by ``dt * f``, pose by the kinematics
    evaluated at the pre-update twist."""
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    x = np.asarray(state, dtype=float)
    a = np.asarray(f(x, u), dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite twist derivative in Euler step")
    out = core.kinematic_step(x, dt)
    out[core.TWIST] = x[core.TWIST] + dt * a
    return out


def integrate_rk4(f, state, u, dt):
    """Classical RK4 on the full 12-state field ``[R(mu) v, omega, f]``."""
    if dt <= 0:
        raise InvalidInputError("dt must be positive")

    def full(x, uu):
        a = np.asarray(f(x, uu), dtype=float)
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite twist derivative in RK4 stage")
        return np.concatenate([core.pose_rates(x), a])

    out = rk4_step(full, np.asarray(state, dtype=float), u, dt)
    out[core.ATT] = core.wrap_angle(out[core.ATT])
    core.check_gimbal(out)
    return out


@dataclass(frozen=True)
class FossenModel:
    """Discrete-time wrapper: the Fossen field plus an integration scheme."""

    params: FossenParams
    dt: float
    scheme: str = "euler"
    bound: float = 1e3
    name: str = "fossen"

    def __post_init__(self):
        try:
            kernels.scheme_code(self.scheme)
        except ValueError as exc:
            raise InvalidInputError(str(exc)) from None
        object.__setattr__(self, "_packed", self.params.packed())

    @property
    def n_inputs(self):
        return self.params.n_inputs

    def accel(self, state, u):
        return fossen_accel(self.params, state, u)

    def step(self, state, u):
        f = lambda x, uu: fossen_accel(self.params, x, uu)  # noqa: E731
        if self.scheme == "rk4":
            return integrate_rk4(f, state, u, self.dt)
        if self.scheme == "euler":
            return integrate_euler(f, state, u, self.dt)
        x = np.asarray(state, dtype=float)
        out = x.copy()
        out[core.TWIST] = x[core.TWIST] + self.dt * f(x, u)
        return core.kinematic_step(np.concatenate([x[core.POSE], out[core.TWIST]]), self.dt)

    def rollout(self, X0, U):
        """Batched rollout: ``X0`` (W, 12), ``U`` (W, H, m) -> ``(X_H, diverged)``."""
        return kernels.fossen_rollout(
            X0, U, self.dt, self._packed, kernels.scheme_code(self.scheme), self.bound, core.pitch_limit()
        )

    def twist_step(self, X, U):
        """Batched one-step Euler twist prediction ``nu + dt * f(x, u)``."""
        X = np.atleast_2d(X)
        return X[:, core.TWIST] + self.dt * kernels.fossen_accel(X, np.atleast_2d(U), self._packed)


# ---------------------------------------------------------------------------
# double integrator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DIModel:
    K_lin: np.ndarray
    K_ang: np.ndarray
    dt: float
    lam: float = 0.0
    bound: float = 1e3
    name: str = "di"

    @property
    def n_inputs(self):
        return self.K_lin.shape[1]

    def step(self, state, u):
        return di_step(self, state, u)

    def rollout(self, X0, U):
        return kernels.di_rollout(X0, U, self.dt, self.K_lin, self.K_ang, self.bound, core.pitch_limit())

    def to_container(self, provenance=None, config=None):
        return container.Container(
            "di",
            {"K_lin": self.K_lin, "K_ang": self.K_ang},
            {"dt": float(self.dt), "lambda": float(self.lam), "m": int(self.n_inputs)},
            config or {},
            provenance or {},
        )

    @classmethod
    def from_container(cls, c):
        return cls(c.arrays["K_lin"], c.arrays["K_ang"], float(c.scalars["dt"]), float(c.scalars["lambda"]))


def di_fit(ds, lam=1e-3):
    """Ridge fit of ``nu_dot ~ [K_lin; K_ang] u`` on forward-difference
    accelerations taken inside each segment."""
    if lam < 0:
        raise InvalidInputError("lambda must be non-negative")
    m = ds.n_inputs
    X, U, Y = ds.snapshot_pairs()
    if X.shape[0] < m + 1:
        raise InvalidInputError(f"need at least {m + 1} snapshot pairs, have {X.shape[0]}")
    acc = (Y[:, core.TWIST] - X[:, core.TWIST]) / ds.dt
    K = ridge_solve(U.T, acc.T, lam)
    return DIModel(K_lin=K[0:3].copy(), K_ang=K[3:6].copy(), dt=ds.dt, lam=float(lam))


def di_step(model, state, u):
    """``p += dt R v``, ``mu += dt omega``, ``v += dt K_lin u``, ``omega += dt K_ang u``."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.n_inputs:
        raise InvalidInputError(f"expected {model.n_inputs} inputs, got {u.shape[-1]}")
    out = core.kinematic_step(x, model.dt)
    out[core.LIN] = x[core.LIN] + model.dt * (model.K_lin @ u)
    out[core.ANG] = x[core.ANG] + model.dt * (model.K_ang @ u)
    return out


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Excitation:
    """Band-limited pseudo-random thruster commands.

    ``q`` independent Gaussian white-noise sources are low-pass filtered
    (Butterworth, ``bandwidth_hz``), scaled to unit RMS, multiplied by
    ``amplitude`` and mapped to the ``m`` channels by ``mixing`` (m x q,
    identity when omitted).  Commands are clipped to [-1, 1].
    """

    amplitude: object = 0.4
    bandwidth_hz: float = 0.5
    mixing: np.ndarray | None = None
    order: int = 2

    def signals(self, n, m, rate, rng):
        mix = np.eye(m) if self.mixing is None else np.asarray(self.mixing, dtype=float)
        if mix.shape[0] != m:
            raise InvalidInputError(f"mixing matrix must have {m} rows")
        q = mix.shape[1]
        amp = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (q,))
        if np.all(amp == 0):
            return np.zeros((n, m))
        s = bandlimited_noise(n, q, rate, self.bandwidth_hz, rng, self.order) * amp
        return np.clip(s @ mix.T, -1.0, 1.0)

    def simulate(self, params, x0, n, rate, rng, bound=1e3):
        U = self.signals(n, params.n_inputs, rate, rng)
        X, fail = kernels.fossen_simulate(x0, U, 1.0 / rate, params.packed(), bound, core.pitch_limit())
        return X, U, fail


def bandlimited_noise(n, q, rate, bandwidth_hz, rng, order=2):
    """``(n, q)`` Butterworth-filtered white noise, scaled to unit RMS."""
    nyq = 0.5 * rate
    wn = min(bandwidth_hz / nyq, 0.99)
    sos = scipy.signal.butter(order, wn, output="sos")
    burn = int(np.ceil(5.0 * rate / max(bandwidth_hz, 1e-3)))
    white = rng.standard_normal((n + burn, q))
    s = scipy.signal.sosfilt(sos, white, axis=0)[burn:]
    rms = np.sqrt(np.mean(s * s, axis=0))
    return s / np.where(rms > 0, rms, 1.0)


@dataclass(frozen=True)
class PilotedExcitation:
    """Station-keeping pilot plus a band-limited disturbance wrench.

    The pilot holds the initial position and heading with PD laws on body
    force and yaw moment.  A filtered random wrench (``wrench_rms`` per body
    axis, in N and N m) is added before allocation through the pseudo-inverse
    of the thrust map, and the resulting commands are clipped to [-1, 1].
    Roll and pitch are left to the restoring moment.
    """

    wrench_rms: tuple = (30.0, 30.0, 20.0, 0.3, 0.3, 0.2)
    kp_pos: float = 1.0
    kd_vel: float = 4.0
    kp_yaw: float = 10.0
    kd_yaw: float = 5.0
    bandwidth_hz: float = 0.4

    def simulate(self, params, x0, n, rate, rng, bound=1e3):
        Wd = bandlimited_noise(n, 6, rate, self.bandwidth_hz, rng) * np.asarray(self.wrench_rms, dtype=float)
        Tpinv = np.linalg.pinv(params.allocation * params.thrust_gain[None, :])
        gains = np.array([self.kp_pos, self.kd_vel, self.kp_yaw, self.kd_yaw])
        ref = np.array([x0[0], x0[1], x0[2], x0[5]])
        return kernels.pilot_simulate(x0, Wd, 1.0 / rate, params.packed(), Tpinv, gains, ref, bound, core.pitch_limit())


def tank_excitation(amplitude=0.15, vertical=0.03, heave=0.1, bandwidth_hz=0.4):
    """Excitation preset for the 8-channel BlueROV2 Heavy layout.

    Horizontal thrusters get independent signals; the vertical ones share a
    common heave signal plus small independent parts, which keeps roll and
    pitch in the range a stabilised vehicle would see.
    """
    mix = np.zeros((8, 9))
    mix[:4, :4] = np.eye(4) * amplitude
    mix[4:, 4:8] = np.eye(4) * vertical
    mix[4:, 8] = heave
    return Excitation(amplitude=1.0, bandwidth_hz=bandwidth_hz, mixing=mix)


def synth_generate(
    params,
    excitation=None,
    duration=60.0,
    rate=50.0,
    noise=0.0,
    seed=0,
    segments=1,
    x0=None,
    bound=1e3,
):
    """Simulate the Fossen model with RK4 under an excitation preset.

    ``duration`` is split evenly into ``segments`` independent runs from
    ``x0`` (rest at the origin by default).  ``noise`` is the standard
    deviation (scalar or per state entry) of additive Gaussian measurement
    noise.  Output is deterministic given ``seed``.
    """
    if duration <= 0 or rate <= 0:
        raise InvalidInputError("duration and rate must be positive")
    if segments < 1:
        raise InvalidInputError("segments must be >= 1")
    excitation = excitation or Excitation()
    dt = 1.0 / rate
    n_total = int(round(duration * rate))
    sizes = [n_total // segments + (1 if i < n_total % segments else 0) for i in range(segments)]
    x0 = np.zeros(core.N_STATE) if x0 is None else np.asarray(x0, dtype=float)
    noise_std = np.broadcast_to(np.asarray(noise, dtype=float), (core.N_STATE,))
    streams = np.random.SeedSequence(seed).spawn(segments)
    out, t0 = [], 0.0
    for size, ss in zip(sizes, streams):
        rng = np.random.default_rng(ss)
        X, U, fail = excitation.simulate(params, x0, size, rate, rng, bound)
        if fail >= 0:
            raise DivergenceError(
                f"synthetic rollout left the state bounds at t = {t0 + fail * dt:.2f} s", when=t0 + fail * dt
            )
        if np.any(noise_std > 0):
            X = X + rng.standard_normal(X.shape) * noise_std
            X[:, core.ATT] = core.wrap_angle(X[:, core.ATT])
        t = t0 + np.arange(size) / rate
        out.append(Segment(t, X, U))
        t0 = t[-1] + 10.0 * dt
    meta = {
        "source": "synthetic",
        "rate": rate,
        "seed": seed,
        "duration": duration,
        "segments": segments,
        "placeholder_params": params.placeholder,
    }
    return Dataset(out, dt, meta)


EXCITATION_PRESETS = {
    "thrusters": tank_excitation,
    "piloted": PilotedExcitation,
}


def excitation_preset(name):
    try:
        return EXCITATION_PRESETS[name]()
    except KeyError:
        raise InvalidInputError(f"unknown excitation {name!r}; choose from {sorted(EXCITATION_PRESETS)}") from None
