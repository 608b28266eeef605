"""EDMD with control on a Gaussian RBF dictionary.

Pipeline: k-means centers on the training states, lift
``z = [x, exp(-gamma ||x - c_i||^2)]``, one ridge solve for ``[A B]`` and the
fixed decoder ``C = [I 0]``.  Rollouts lift once, propagate
``z <- A z + B u`` in the lifted space and decode at the end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container, core, kernels
from .errors import EmptyLogError, InvalidInputError
from .ridge import ridge_solve

DEFAULT_K = 500
DEFAULT_GAMMA = 3.0
DEFAULT_LAMBDA = 0.1
KMEANS_MAX_ITER = 300


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _sqdist(X, C):
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _objective(X, C, labels):
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def farthest_point_init(X, K, seed):
    """Seeded greedy farthest-point seeding: a random first point, then
    repeatedly the point farthest from every center chosen so far."""
    rng = np.random.default_rng(seed)
    N = X.shape[0]
    idx = [int(rng.integers(N))]
    mind = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        j = int(np.argmax(mind))
        idx.append(j)
        mind = np.minimum(mind, ((X - X[j]) ** 2).sum(axis=1))
    return X[idx].copy()


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    objective: list
    n_iter: int
    converged: bool


def kmeans_fit(points, K, seed=0, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations from :func:`farthest_point_init`.

    Stops at an assignment fixpoint or after ``max_iter`` updates.  Clusters
    that empty out are re-seeded at the point farthest from its own center.
    The recorded objective is non-increasing.
    """
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("points must be a 2-D array")
    N = X.shape[0]
    if K < 1 or K > N:
        raise InvalidInputError(f"need 1 <= K <= number of samples ({N}), got K = {K}")
    C = farthest_point_init(X, K, seed)
    labels = None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_sqdist(X, C), axis=1)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            it -= 1
            break
        labels = new
        counts = np.bincount(labels, minlength=K)
        sums = np.stack([np.bincount(labels, weights=X[:, j], minlength=K) for j in range(X.shape[1])], axis=1)
        nonempty = counts > 0
        C = C.copy()
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            resid = ((X - C[labels]) ** 2).sum(axis=1)
            order = np.argsort(-resid, kind="stable")
            for j, p in zip(empty, order):
                C[j] = X[p]
        history.append(_objective(X, C, labels))
    return KMeansResult(C, labels, history, it, converged)


def kmeans(points, K, seed=0, max_iter=KMEANS_MAX_ITER):
    return kmeans_fit(points, K, seed, max_iter).centers


# ---------------------------------------------------------------------------
# dictionary and model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RbfDictionary:
    centers: np.ndarray
    gamma: float
    n: int = core.N_STATE

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, self.n)
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("RBF centers must be finite")
        object.__setattr__(self, "centers", c)

    @property
    def K(self):
        return self.centers.shape[0]

    @property
    def d(self):
        return self.n + self.K

    def features(self, X):
        return kernels.rbf_features(np.atleast_2d(X), self.centers, self.gamma)


def lift(x, dictionary):
    """``[x, phi_1(x), ..., phi_K(x)]`` for one state or a (N, n) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    Z = np.concatenate([X, dictionary.features(X)], axis=1)
    return Z[0] if single else Z


@dataclass(frozen=True)
class KoopmanModel:
    dictionary: RbfDictionary
    A: np.ndarray
    B: np.ndarray
    lam: float
    dt: float
    seed: int = 0
    relift: bool = False
    bound: float = 1e6
    name: str = "koopman"

    @property
    def n(self):
        return self.dictionary.n

    @property
    def d(self):
        return self.dictionary.d

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def C(self):
        return np.hstack([np.eye(self.n), np.zeros((self.n, self.d - self.n))])

    def lift(self, x):
        return lift(x, self.dictionary)

    def step(self, z, u):
        return koopman_step(self, z, u)

    def decode(self, z):
        return decode(self, z)

    def rollout(self, X0, U):
        """Batched endpoint rollout: ``X0`` (W, n), ``U`` (W, H, m)."""
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        U = np.asarray(U, dtype=float)
        Z = self.lift(X0)
        diverged = np.zeros(X0.shape[0], dtype=bool)
        At, Bt = self.A.T, self.B.T
        for k in range(U.shape[1]):
            Z = Z @ At + U[:, k] @ Bt
            if self.relift:
                X = Z[:, : self.n].copy()
                X[:, core.ATT] = core.wrap_angle(X[:, core.ATT])
                Z = self.lift(X)
            bad = ~np.all(np.isfinite(Z), axis=1) | (np.abs(Z[:, : self.n]).max(axis=1) > self.bound)
            if bad.any():
                diverged |= bad
                Z[bad] = 0.0
        X = Z[:, : self.n].copy()
        X[:, core.ATT] = core.wrap_angle(X[:, core.ATT])
        return X, diverged

    def trajectory(self, x0, U):
        """Full predicted trajectory ``(H + 1, n)`` from one initial state."""
        z = self.lift(np.asarray(x0, dtype=float))
        out = [z[: self.n].copy()]
        for u in np.asarray(U, dtype=float):
            z = self.A @ z + self.B @ u
            if self.relift:
                x = z[: self.n].copy()
                x[core.ATT] = core.wrap_angle(x[core.ATT])
                z = self.lift(x)
            out.append(z[: self.n].copy())
        return np.array(out)

    def lifted_rollout(self, z0, U):
        """Single-trajectory lifted propagation (H steps, no decode)."""
        return kernels.lifted_rollout(self.A, self.B, z0, U)

    # -- persistence -------------------------------------------------------

    def to_container(self, provenance=None, config=None):
        return container.Container(
            kind="koopman",
            arrays={"A": self.A, "B": self.B, "centers": self.dictionary.centers},
            scalars={
                "gamma": float(self.dictionary.gamma),
                "lambda": float(self.lam),
                "dt": float(self.dt),
                "seed": int(self.seed),
                "n": int(self.n),
                "K": int(self.dictionary.K),
                "m": int(self.n_inputs),
                "relift": bool(self.relift),
            },
            config=config or {},
            provenance=provenance or {},
        )

    @classmethod
    def from_container(cls, c):
        s = c.scalars
        n, K = int(s["n"]), int(s["K"])
        centers = c.arrays["centers"].reshape(K, n)
        return cls(
            dictionary=RbfDictionary(centers, s["gamma"], n),
            A=c.arrays["A"],
            B=c.arrays["B"],
            lam=s["lambda"],
            dt=s["dt"],
            seed=int(s["seed"]),
            relift=bool(s.get("relift", False)),
        )

    def save(self, path, provenance=None, config=None):
        container.save(path, self.to_container(provenance, config))

    @classmethod
    def load(cls, path):
        return cls.from_container(container.load(path, expect_kind="koopman"))


def koopman_step(model, z, u):
    """``A z + B u``."""
    return model.A @ np.asarray(z, dtype=float) + model.B @ np.asarray(u, dtype=float)


def decode(model, z):
    """First ``n`` lifted coordinates, i.e. ``C z`` with ``C = [I 0]``."""
    return np.asarray(z, dtype=float)[..., : model.n].copy()


def snapshot_matrices(train, dictionary):
    """``(Theta_X, Theta_Y, U)`` with samples as columns.

    Attitude in each target ``x_{k+1}`` is unwrapped relative to ``x_k`` so a
    pair that crosses the +/-pi seam does not show a 2*pi jump.
    """
    X, U, Y = train.snapshot_pairs()
    Y = Y.copy()
    Y[:, core.ATT] = X[:, core.ATT] + core.angle_diff(Y[:, core.ATT], X[:, core.ATT])
    return lift(X, dictionary).T, lift(Y, dictionary).T, U.T


def edmdc_fit(train, K=DEFAULT_K, gamma=DEFAULT_GAMMA, lam=DEFAULT_LAMBDA, seed=0, kmeans_iter=KMEANS_MAX_ITER):
    """Identify a :class:`KoopmanModel` from a training dataset."""
    try:
        X, _, _ = train.snapshot_pairs()
    except EmptyLogError:
        raise InvalidInputError("training dataset has no snapshot pairs") from None
    if K < 0:
        raise InvalidInputError("K must be non-negative")
    centers = kmeans(X, K, seed=seed, max_iter=kmeans_iter) if K > 0 else np.empty((0, X.shape[1]))
    dictionary = RbfDictionary(centers, gamma, X.shape[1])
    TX, TY, U = snapshot_matrices(train, dictionary)
    G = np.vstack([TX, U])
    M = ridge_solve(G, TY, lam)
    d = dictionary.d
    return KoopmanModel(dictionary, M[:, :d].copy(), M[:, d:].copy(), float(lam), train.dt, int(seed))
