"""Hot inner loops, each in a numba and a pure-numpy flavour.

The numba versions are used by default.  Set ``UVSYSID_DISABLE_NUMBA=1`` in
the environment (before import) to run everything through the numpy path,
e.g. on platforms without a working LLVM.  ``benchmarks/bench_kernels.py``
times both paths against each other.

Fossen parameters travel through the kernels as a packed tuple, see
:meth:`uvsysid.dynamics.FossenParams.packed`::

    (Minv, M, Dlin, Dquad, rest, T, tgain, toff)

with ``rest = [W, B, xg, yg, zg, xb, yb, zb]``.

Rollout kernels never raise on a bad window; they return a ``diverged`` mask
so the caller can count and exclude those windows.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
NUMBA_ENABLED = NUMBA_AVAILABLE and os.environ.get("UVSYSID_DISABLE_NUMBA", "").strip().lower() not in (
    "1",
    "true",
    "yes",
    "on",
)

EULER, RK4, SEMI_IMPLICIT = 0, 1, 2
_SCHEMES = {"euler": EULER, "rk4": RK4, "semi-implicit": SEMI_IMPLICIT}


def scheme_code(name):
    try:
        return _SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown integration scheme {name!r}; expected one of {sorted(_SCHEMES)}") from None


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _wrap_np(a):
    w = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return np.where((a > -np.pi) & (a <= np.pi), a, w)


def _pose_rates_np(x):
    phi, theta, psi = x[:, 3], x[:, 4], x[:, 5]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    u, v, w = x[:, 6], x[:, 7], x[:, 8]
    out = np.empty((x.shape[0], 6))
    out[:, 0] = cp * ct * u + (cp * st * sf - sp * cf) * v + (cp * st * cf + sp * sf) * w
    out[:, 1] = sp * ct * u + (sp * st * sf + cp * cf) * v + (sp * st * cf - cp * sf) * w
    out[:, 2] = -st * u + ct * sf * v + ct * cf * w
    out[:, 3:6] = x[:, 9:12]
    return out


def _fossen_accel_np(x, u, P):
    Minv, M, Dlin, Dquad, rest, T, tgain, toff = P
    nu = x[:, 6:12]
    v, om = nu[:, 0:3], nu[:, 3:6]
    a = v @ M[0:3, 0:3].T + om @ M[0:3, 3:6].T
    b = v @ M[3:6, 0:3].T + om @ M[3:6, 3:6].T
    cor = np.concatenate([np.cross(om, a), np.cross(v, a) + np.cross(om, b)], axis=1)
    damp = nu @ Dlin.T + Dquad * np.abs(nu) * nu
    W, Bf, xg, yg, zg, xb, yb, zb = rest
    phi, theta = x[:, 3], x[:, 4]
    cf, sf, ct, st = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta)
    g = np.empty_like(nu)
    g[:, 0] = (W - Bf) * st
    g[:, 1] = -(W - Bf) * ct * sf
    g[:, 2] = -(W - Bf) * ct * cf
    g[:, 3] = -(yg * W - yb * Bf) * ct * cf + (zg * W - zb * Bf) * ct * sf
    g[:, 4] = (zg * W - zb * Bf) * st + (xg * W - xb * Bf) * ct * cf
    g[:, 5] = -(xg * W - xb * Bf) * ct * sf - (yg * W - yb * Bf) * st
    wrench = (u * tgain + toff) @ T.T
    return (wrench - cor - damp - g) @ Minv.T


def _state_derivative_np(x, u, P):
    return np.concatenate([_pose_rates_np(x), _fossen_accel_np(x, u, P)], axis=1)


def _finish_np(x, bound, plim, diverged):
    x[:, 3:6] = _wrap_np(x[:, 3:6])
    bad = ~np.all(np.isfinite(x), axis=1) | np.any(np.abs(x) > bound, axis=1) | (np.abs(x[:, 4]) >= plim)
    diverged |= bad
    return x, diverged


def fossen_step_np(x, u, dt, P, scheme):
    if scheme == RK4:
        k1 = _state_derivative_np(x, u, P)
        k2 = _state_derivative_np(x + 0.5 * dt * k1, u, P)
        k3 = _state_derivative_np(x + 0.5 * dt * k2, u, P)
        k4 = _state_derivative_np(x + dt * k3, u, P)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = x.copy()
    out[:, 6:12] = x[:, 6:12] + dt * _fossen_accel_np(x, u, P)
    src = out if scheme == SEMI_IMPLICIT else x
    out[:, 0:6] = x[:, 0:6] + dt * _pose_rates_np(src)
    return out


def fossen_rollout_np(X0, U, dt, P, scheme, bound, plim):
    x = np.array(X0, dtype=float)
    diverged = np.zeros(x.shape[0], dtype=bool)
    for k in range(U.shape[1]):
        nxt = fossen_step_np(x, U[:, k], dt, P, scheme)
        nxt, diverged = _finish_np(nxt, bound, plim, diverged)
        x = np.where(diverged[:, None], x, nxt)
    return x, diverged


def fossen_simulate_np(x0, U, dt, P, bound, plim):
    """RK4 trajectory from ``x0`` under ``U`` (N, m).  Returns ``(X, fail)``
    where ``X[k]`` is the state before input ``U[k]`` and ``fail`` is the first
    sample index that left the bounds (or -1)."""
    N = U.shape[0]
    X = np.empty((N, x0.shape[0]))
    x = np.array(x0, dtype=float)[None, :]
    X[0] = x[0]
    for k in range(1, N):
        x = fossen_step_np(x, U[k - 1 : k], dt, P, RK4)
        x[:, 3:6] = _wrap_np(x[:, 3:6])
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > bound) or abs(x[0, 4]) >= plim:
            return X[:k], k
        X[k] = x[0]
    return X, -1


def di_rollout_np(X0, U, dt, Klin, Kang, bound, plim):
    x = np.array(X0, dtype=float)
    diverged = np.zeros(x.shape[0], dtype=bool)
    for k in range(U.shape[1]):
        u = U[:, k]
        nxt = x.copy()
        nxt[:, 0:6] = x[:, 0:6] + dt * _pose_rates_np(x)
        nxt[:, 6:9] = x[:, 6:9] + dt * (u @ Klin.T)
        nxt[:, 9:12] = x[:, 9:12] + dt * (u @ Kang.T)
        nxt, diverged = _finish_np(nxt, bound, plim, diverged)
        x = np.where(diverged[:, None], x, nxt)
    return x, diverged


def rbf_features_np(X, centers, gamma, chunk=256):
    n_pts, n_ctr = X.shape[0], centers.shape[0]
    out = np.empty((n_pts, n_ctr))
    for s in range(0, n_pts, chunk):
        diff = X[s : s + chunk, None, :] - centers[None, :, :]
        out[s : s + chunk] = np.exp(-gamma * np.einsum("ijk,ijk->ij", diff, diff))
    return out


def lifted_rollout_np(A, B, z0, U):
    z = np.array(z0, dtype=float)
    for k in range(U.shape[0]):
        z = A @ z + B @ U[k]
    return z


def _pilot_command_np(x, w, Tpinv, ubias, gains, ref):
    kp, kd, kpsi, kr = gains
    R = _rotation_np(x[3], x[4], x[5])
    f = R.T @ (-kp * (x[0:3] - ref[0:3])) - kd * x[6:9]
    tau = np.array([f[0], f[1], f[2], 0.0, 0.0, -kpsi * _wrap_np(np.array([x[5] - ref[3]]))[0] - kr * x[11]])
    return np.clip(Tpinv @ (tau + w) - ubias, -1.0, 1.0)


def _rotation_np(phi, theta, psi):
    cf, sf, ct, st, cp, sp = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta), np.cos(psi), np.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
            [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def pilot_simulate_np(x0, Wd, dt, P, Tpinv, ubias, gains, ref, bound, plim):
    N = Wd.shape[0]
    m = Tpinv.shape[0]
    X = np.empty((N, x0.shape[0]))
    U = np.zeros((N, m))
    X[0] = x0
    for k in range(N):
        U[k] = _pilot_command_np(X[k], Wd[k], Tpinv, ubias, gains, ref)
        if k == N - 1:
            break
        nxt = fossen_step_np(X[k][None], U[k][None], dt, P, RK4)
        nxt, bad = _finish_np(nxt, bound, plim, np.zeros(1, dtype=bool))
        if bad[0]:
            return X[: k + 1], U[: k + 1], k + 1
        X[k + 1] = nxt[0]
    return X, U, -1


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:
    njit = numba.njit(cache=True, fastmath=False, nogil=True)

    @njit
    def _wrap_nb(a):
        if a > -np.pi and a <= np.pi:
            return a
        w = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
        if w <= -np.pi:
            w += 2.0 * np.pi
        return w

    @njit
    def _pose_rates_nb(x, out):
        cf, sf = np.cos(x[3]), np.sin(x[3])
        ct, st = np.cos(x[4]), np.sin(x[4])
        cp, sp = np.cos(x[5]), np.sin(x[5])
        u, v, w = x[6], x[7], x[8]
        out[0] = cp * ct * u + (cp * st * sf - sp * cf) * v + (cp * st * cf + sp * sf) * w
        out[1] = sp * ct * u + (sp * st * sf + cp * cf) * v + (sp * st * cf - cp * sf) * w
        out[2] = -st * u + ct * sf * v + ct * cf * w
        out[3] = x[9]
        out[4] = x[10]
        out[5] = x[11]

    @njit
    def _fossen_accel_nb(x, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, out):
        a = np.zeros(3)
        b = np.zeros(3)
        for i in range(3):
            for j in range(3):
                a[i] += M[i, j] * x[6 + j] + M[i, 3 + j] * x[9 + j]
                b[i] += M[3 + i, j] * x[6 + j] + M[3 + i, 3 + j] * x[9 + j]
        v0, v1, v2 = x[6], x[7], x[8]
        o0, o1, o2 = x[9], x[10], x[11]
        f = np.empty(6)
        # - C(nu) nu
        f[0] = -(o1 * a[2] - o2 * a[1])
        f[1] = -(o2 * a[0] - o0 * a[2])
        f[2] = -(o0 * a[1] - o1 * a[0])
        f[3] = -((v1 * a[2] - v2 * a[1]) + (o1 * b[2] - o2 * b[1]))
        f[4] = -((v2 * a[0] - v0 * a[2]) + (o2 * b[0] - o0 * b[2]))
        f[5] = -((v0 * a[1] - v1 * a[0]) + (o0 * b[1] - o1 * b[0]))
        # - D(nu) nu
        for i in range(6):
            acc = Dquad[i] * abs(x[6 + i]) * x[6 + i]
            for j in range(6):
                acc += Dlin[i, j] * x[6 + j]
            f[i] -= acc
        # - g(eta)
        W, Bf = rest[0], rest[1]
        xg, yg, zg, xb, yb, zb = rest[2], rest[3], rest[4], rest[5], rest[6], rest[7]
        cf, sf, ct, st = np.cos(x[3]), np.sin(x[3]), np.cos(x[4]), np.sin(x[4])
        f[0] -= (W - Bf) * st
        f[1] -= -(W - Bf) * ct * sf
        f[2] -= -(W - Bf) * ct * cf
        f[3] -= -(yg * W - yb * Bf) * ct * cf + (zg * W - zb * Bf) * ct * sf
        f[4] -= (zg * W - zb * Bf) * st + (xg * W - xb * Bf) * ct * cf
        f[5] -= -(xg * W - xb * Bf) * ct * sf - (yg * W - yb * Bf) * st
        # + w(u)
        m = u.shape[0]
        for j in range(m):
            thrust = tgain[j] * u[j] + toff[j]
            for i in range(6):
                f[i] += T[i, j] * thrust
        for i in range(6):
            acc = 0.0
            for j in range(6):
                acc += Minv[i, j] * f[j]
            out[i] = acc

    @njit
    def _xdot_nb(x, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, out):
        _pose_rates_nb(x, out[0:6])
        _fossen_accel_nb(x, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, out[6:12])

    @njit
    def _fossen_step_nb(x, u, dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, scheme, out):
        n = x.shape[0]
        if scheme == 1:
            k1 = np.empty(n)
            k2 = np.empty(n)
            k3 = np.empty(n)
            k4 = np.empty(n)
            tmp = np.empty(n)
            _xdot_nb(x, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, k1)
            for i in range(n):
                tmp[i] = x[i] + 0.5 * dt * k1[i]
            _xdot_nb(tmp, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, k2)
            for i in range(n):
                tmp[i] = x[i] + 0.5 * dt * k2[i]
            _xdot_nb(tmp, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, k3)
            for i in range(n):
                tmp[i] = x[i] + dt * k3[i]
            _xdot_nb(tmp, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, k4)
            for i in range(n):
                out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            return
        acc = np.empty(6)
        _fossen_accel_nb(x, u, Minv, M, Dlin, Dquad, rest, T, tgain, toff, acc)
        for i in range(6):
            out[6 + i] = x[6 + i] + dt * acc[i]
        rates = np.empty(6)
        if scheme == 2:
            tmp = x.copy()
            for i in range(6):
                tmp[6 + i] = out[6 + i]
            _pose_rates_nb(tmp, rates)
        else:
            _pose_rates_nb(x, rates)
        for i in range(6):
            out[i] = x[i] + dt * rates[i]

    @njit
    def _finish_nb(x, bound, plim):
        for i in range(3, 6):
            x[i] = _wrap_nb(x[i])
        for i in range(x.shape[0]):
            if not np.isfinite(x[i]) or abs(x[i]) > bound:
                return True
        return abs(x[4]) >= plim

    @njit
    def fossen_rollout_nb(X0, U, dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, scheme, bound, plim):
        nw, H = U.shape[0], U.shape[1]
        Xend = X0.copy()
        diverged = np.zeros(nw, dtype=np.bool_)
        nxt = np.empty(X0.shape[1])
        for w in range(nw):
            x = X0[w].copy()
            for k in range(H):
                _fossen_step_nb(x, U[w, k], dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, scheme, nxt)
                if _finish_nb(nxt, bound, plim):
                    diverged[w] = True
                    break
                x[:] = nxt
            Xend[w] = x
        return Xend, diverged

    @njit
    def fossen_simulate_nb(x0, U, dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, bound, plim):
        N = U.shape[0]
        X = np.empty((N, x0.shape[0]))
        X[0] = x0
        nxt = np.empty(x0.shape[0])
        for k in range(1, N):
            _fossen_step_nb(X[k - 1], U[k - 1], dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, 1, nxt)
            if _finish_nb(nxt, bound, plim):
                return X[:k], k
            X[k] = nxt
        return X, -1

    @njit
    def pilot_simulate_nb(x0, Wd, dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, Tpinv, ubias, gains, ref, bound, plim):
        N = Wd.shape[0]
        m = Tpinv.shape[0]
        X = np.empty((N, x0.shape[0]))
        U = np.zeros((N, m))
        X[0] = x0
        nxt = np.empty(x0.shape[0])
        tau = np.empty(6)
        for k in range(N):
            x = X[k]
            cf, sf = np.cos(x[3]), np.sin(x[3])
            ct, st = np.cos(x[4]), np.sin(x[4])
            cp, sp = np.cos(x[5]), np.sin(x[5])
            e0 = -gains[0] * (x[0] - ref[0])
            e1 = -gains[0] * (x[1] - ref[1])
            e2 = -gains[0] * (x[2] - ref[2])
            # R^T e
            tau[0] = cp * ct * e0 + sp * ct * e1 - st * e2 - gains[1] * x[6]
            tau[1] = (cp * st * sf - sp * cf) * e0 + (sp * st * sf + cp * cf) * e1 + ct * sf * e2 - gains[1] * x[7]
            tau[2] = (cp * st * cf + sp * sf) * e0 + (sp * st * cf - cp * sf) * e1 + ct * cf * e2 - gains[1] * x[8]
            tau[3] = 0.0
            tau[4] = 0.0
            tau[5] = -gains[2] * _wrap_nb(x[5] - ref[3]) - gains[3] * x[11]
            for c in range(m):
                acc = -ubias[c]
                for j in range(6):
                    acc += Tpinv[c, j] * (tau[j] + Wd[k, j])
                U[k, c] = min(1.0, max(-1.0, acc))
            if k == N - 1:
                break
            _fossen_step_nb(x, U[k], dt, Minv, M, Dlin, Dquad, rest, T, tgain, toff, 1, nxt)
            if _finish_nb(nxt, bound, plim):
                return X[: k + 1], U[: k + 1], k + 1
            X[k + 1] = nxt
        return X, U, -1

    @njit
    def di_rollout_nb(X0, U, dt, Klin, Kang, bound, plim):
        nw, H, m = U.shape[0], U.shape[1], U.shape[2]
        Xend = X0.copy()
        diverged = np.zeros(nw, dtype=np.bool_)
        rates = np.empty(6)
        nxt = np.empty(X0.shape[1])
        for w in range(nw):
            x = X0[w].copy()
            for k in range(H):
                _pose_rates_nb(x, rates)
                for i in range(6):
                    nxt[i] = x[i] + dt * rates[i]
                for i in range(3):
                    al = 0.0
                    aa = 0.0
                    for j in range(m):
                        al += Klin[i, j] * U[w, k, j]
                        aa += Kang[i, j] * U[w, k, j]
                    nxt[6 + i] = x[6 + i] + dt * al
                    nxt[9 + i] = x[9 + i] + dt * aa
                if _finish_nb(nxt, bound, plim):
                    diverged[w] = True
                    break
                x[:] = nxt
            Xend[w] = x
        return Xend, diverged

    @njit
    def rbf_features_nb(X, centers, gamma):
        n_pts, n_ctr, n = X.shape[0], centers.shape[0], X.shape[1]
        out = np.empty((n_pts, n_ctr))
        for i in range(n_pts):
            for j in range(n_ctr):
                s = 0.0
                for k in range(n):
                    d = X[i, k] - centers[j, k]
                    s += d * d
                out[i, j] = np.exp(-gamma * s)
        return out

    @njit
    def lifted_rollout_nb(A, B, z0, U):
        # np.dot lowers to BLAS gemv, which beats a hand-written loop at d ~ 500
        z = z0.copy()
        for k in range(U.shape[0]):
            z = np.dot(A, z) + np.dot(B, U[k])
        return z


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def fossen_rollout(X0, U, dt, P, scheme=EULER, bound=1e3, plim=np.pi / 2 - 0.1):
    X0 = np.ascontiguousarray(X0, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if NUMBA_ENABLED:
        return fossen_rollout_nb(X0, U, float(dt), *P, int(scheme), float(bound), float(plim))
    return fossen_rollout_np(X0, U, dt, P, scheme, bound, plim)


def fossen_simulate(x0, U, dt, P, bound=1e3, plim=np.pi / 2 - 0.1):
    x0 = np.ascontiguousarray(x0, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if NUMBA_ENABLED:
        return fossen_simulate_nb(x0, U, float(dt), *P, float(bound), float(plim))
    return fossen_simulate_np(x0, U, dt, P, bound, plim)


def fossen_accel(X, U, P):
    """Batched twist derivative, shape (W, 6).  Always numpy: it is vectorised
    over the batch and only used outside the tight loops."""
    return _fossen_accel_np(np.atleast_2d(X), np.atleast_2d(U), P)


def di_rollout(X0, U, dt, Klin, Kang, bound=1e3, plim=np.pi / 2 - 0.1):
    X0 = np.ascontiguousarray(X0, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    Klin = np.ascontiguousarray(Klin, dtype=float)
    Kang = np.ascontiguousarray(Kang, dtype=float)
    if NUMBA_ENABLED:
        return di_rollout_nb(X0, U, float(dt), Klin, Kang, float(bound), float(plim))
    return di_rollout_np(X0, U, dt, Klin, Kang, bound, plim)


def rbf_features(X, centers, gamma):
    X = np.ascontiguousarray(X, dtype=float)
    centers = np.ascontiguousarray(centers, dtype=float)
    if centers.shape[0] == 0:
        return np.empty((X.shape[0], 0))
    if NUMBA_ENABLED:
        return rbf_features_nb(X, centers, float(gamma))
    return rbf_features_np(X, centers, gamma)


def lifted_rollout(A, B, z0, U):
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    z0 = np.ascontiguousarray(z0, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if NUMBA_ENABLED:
        return lifted_rollout_nb(A, B, z0, U)
    return lifted_rollout_np(A, B, z0, U)


def pose_rates(X):
    """Batched pose derivative ``[R(mu) v, omega]``, shape (W, 6)."""
    return _pose_rates_np(np.atleast_2d(np.asarray(X, dtype=float)))


def pilot_simulate(x0, Wd, dt, P, Tpinv, gains, ref, bound=1e3, plim=np.pi / 2 - 0.1):
    """Closed-loop simulation under a station-keeping pilot (RK4).

    At each tick the body wrench ``tau = [R^T(-kp (p - p_ref)) - kd v, 0, 0,
    -kpsi wrap(psi - psi_ref) - kr r] + Wd[k]`` is allocated to commands with
    ``Tpinv`` (a pseudo-inverse of ``T diag(gain)``), so the thrust offset
    is compensated, and clipped to [-1, 1].  Returns ``(X, U, fail)``.
    """
    x0 = np.ascontiguousarray(x0, dtype=float)
    Wd = np.ascontiguousarray(Wd, dtype=float)
    Tpinv = np.ascontiguousarray(Tpinv, dtype=float)
    ubias = np.ascontiguousarray(Tpinv @ (P[5] @ P[7]))
    gains = np.ascontiguousarray(gains, dtype=float)
    ref = np.ascontiguousarray(ref, dtype=float)
    if NUMBA_ENABLED:
        return pilot_simulate_nb(x0, Wd, float(dt), *P, Tpinv, ubias, gains, ref, float(bound), float(plim))
    return pilot_simulate_np(x0, Wd, dt, P, Tpinv, ubias, gains, ref, bound, plim)
