"""Learned one-step twist correction on top of a nominal simulator.

For every transition ``k -> k+1`` inside a segment the nominal model predicts
``nu_sim = nu_k + dt * f(x_k, u_k)`` from the true state, and the network is
trained to predict the residual ``nu_{k+1} - nu_sim`` from the normalised
feature vector ``[nu_k, nu_sim, u_k]``.  At inference the first slot carries
the rolled-out (corrected) twist instead of ground truth.

The multilayer perceptron is written directly in numpy (float64) with
analytic backpropagation, so it can be verified against finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container, core, kernels
from .errors import DegenerateTargetError, DivergenceError, InstabilityError, InvalidInputError
from .ingest import Normalizer

log = logging.getLogger(__name__)

HUBER_FORMS = ("continuous", "as-written")
REDUCTIONS = ("per-sample", "per-element")
SELECTIONS = ("epoch-mean", "full")


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualSamples:
    """Raw and normalised residual-learning arrays, one row per transition."""

    prev_twist: np.ndarray
    sim_twist: np.ndarray
    inputs: np.ndarray
    delta: np.ndarray
    normalizer: Normalizer

    def __len__(self):
        return self.delta.shape[0]

    @property
    def features(self):
        nz = self.normalizer
        return np.concatenate(
            [nz.normalize_twist(self.prev_twist), nz.normalize_twist(self.sim_twist), nz.normalize_input(self.inputs)],
            axis=1,
        )

    @property
    def targets(self):
        return self.normalizer.normalize_delta(self.delta)


def nominal_twists(gt, nominal):
    """``(prev_twist, sim_twist, inputs, true_next_twist, states)`` over all
    in-segment transitions of ``gt``."""
    X, U, Y = gt.snapshot_pairs()
    sim = nominal.twist_step(X, U)
    return X[:, core.TWIST], sim, U, Y[:, core.TWIST], X


def build_residual_dataset(gt, nominal, normalizer=None):
    """Residual samples for every transition of ``gt``.

    ``nominal`` needs a batched ``twist_step(X, U)``.  Without a
    ``normalizer`` one is fitted on these samples (use that for the training
    split and pass it on for held-out data).
    """
    prev, sim, U, nxt, _ = nominal_twists(gt, nominal)
    delta = nxt - sim
    if normalizer is None:
        # real - sim is exactly the residual, so its statistics come for free
        normalizer = Normalizer.fit(nxt, sim, U, residual_error=DegenerateTargetError)
    return ResidualSamples(prev, sim, U, delta, normalizer)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def silu(x):
    return x / (1.0 + np.exp(-x))


@dataclass
class MLP:
    """Dense network; SiLU after every layer except the last."""

    weights: list
    biases: list

    @classmethod
    def init(cls, sizes, seed=0):
        """Uniform(+/- 1/sqrt(fan_in)) initialisation for weights and biases."""
        rng = np.random.default_rng(seed)
        W, b = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            W.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            b.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(W, b)

    @classmethod
    def zeros_like(cls, other):
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self):
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, Z, keep=False):
        h = np.atleast_2d(np.asarray(Z, dtype=float))
        cache = [(h, None, None)]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W.T
            a += b
            if i < last:
                sig = 1.0 / (1.0 + np.exp(-a))
                h = a * sig
                if keep:
                    cache.append((h, a, sig))
            else:
                h = a
        return (h, cache) if keep else h

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every parameter."""
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, a, sig = cache[i]
            gW[i] = g.T @ h_in
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i]) * (sig * (1.0 + a * (1.0 - sig)))
        return gW, gb


def mlp_forward(model, z):
    """z-scored residual prediction (batched or single)."""
    net = model.net if isinstance(model, ResidualModel) else model
    z = np.asarray(z, dtype=float)
    out = net.forward(z)
    return out[0] if z.ndim == 1 else out


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def huber_loss(r, beta=0.9, form="continuous", reduction="per-sample"):
    """Huber penalty of residual-error vectors ``r`` (last axis).

    ``per-sample`` applies the thresholds to the Euclidean norm of each
    vector; ``per-element`` applies them to each entry and sums over the
    vector.  ``as-written`` uses ``|r|^2`` instead of ``|r|^2 / 2`` on the
    quadratic branch, which makes the penalty jump at ``beta``.
    Returns the loss per vector (a scalar for a single vector).
    """
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    if form not in HUBER_FORMS:
        raise InvalidInputError(f"unknown Huber form {form!r}")
    if reduction not in REDUCTIONS:
        raise InvalidInputError(f"unknown reduction {reduction!r}")
    r = np.asarray(r, dtype=float)
    a = np.linalg.norm(r, axis=-1) if reduction == "per-sample" else np.abs(r)
    quad = a * a if form == "as-written" else 0.5 * a * a
    val = np.where(a <= beta, quad, beta * (a - 0.5 * beta))
    if reduction == "per-element":
        val = val.sum(axis=-1)
    return val[()] if np.ndim(val) == 0 else val


def huber_grad(r, beta=0.9, form="continuous", reduction="per-sample"):
    """Derivative of :func:`huber_loss` w.r.t. ``r`` (same shape as ``r``)."""
    r = np.asarray(r, dtype=float)
    k = 2.0 if form == "as-written" else 1.0
    if reduction == "per-element":
        return np.where(np.abs(r) <= beta, k * r, beta * np.sign(r))
    a = np.linalg.norm(r, axis=-1, keepdims=True)
    safe = np.where(a > 0, a, 1.0)
    return np.where(a <= beta, k * r, beta * r / safe)


def batch_loss(net, Z, T, beta, form, reduction):
    return float(np.mean(huber_loss(net.forward(Z) - T, beta, form, reduction)))


def loss_and_grads(net, Z, T, beta=0.9, form="continuous", reduction="per-sample"):
    out, cache = net.forward(Z, keep=True)
    r = out - T
    n = r.shape[0]
    loss = float(np.mean(huber_loss(r, beta, form, reduction)))
    gW, gb = net.backward(cache, huber_grad(r, beta, form, reduction) / n)
    return loss, gW, gb


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 768
    lr: float = 3e-3
    weight_decay: float = 1e-5
    lr_gamma: float = 0.997
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    beta: float = 0.9
    huber_form: str = "continuous"
    reduction: str = "per-sample"
    hidden: tuple = (256, 256, 256, 256)
    bound_factor: float = 10.0
    # "epoch-mean": average minibatch loss of the epoch; "full": one extra
    # pass over the whole training set after the epoch
    selection: str = "epoch-mean"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be positive")
        if not self.lr > 0 or self.weight_decay < 0 or not 0 < self.lr_gamma <= 1:
            raise InvalidInputError("invalid optimiser settings")
        if self.huber_form not in HUBER_FORMS or self.reduction not in REDUCTIONS:
            raise InvalidInputError("invalid loss settings")
        if self.selection not in SELECTIONS:
            raise InvalidInputError(f"selection must be one of {SELECTIONS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class FitHistory:
    losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")


class AdamW:
    """Adam with decoupled weight decay (decay applied before the moment step)."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            p *= 1.0 - self.lr * self.wd
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(samples, config=None, seed=0, callback=None):
    """Fit a :class:`ResidualModel`.

    Minibatches come from a seeded permutation each epoch, the learning rate
    is multiplied by ``lr_gamma`` after every epoch, and the weights at the
    end of the epoch with the lowest training loss are returned.  The epoch
    loss is the sample-weighted mean minibatch loss, or a full pass over the
    training set when ``config.selection == "full"``.
    ``callback(epoch, loss)`` is invoked once per epoch.
    """
    config = config or TrainConfig()
    if len(samples) == 0:
        raise InvalidInputError("no residual samples to train on")
    Z = np.ascontiguousarray(samples.features)
    T = np.ascontiguousarray(samples.targets)
    rng = np.random.default_rng(seed)
    net = MLP.init([Z.shape[1], *config.hidden, T.shape[1]], seed=int(rng.integers(2**31)))
    opt = AdamW(net.params, config.lr, config.adam_betas, config.adam_eps, config.weight_decay)
    hist = FitHistory()
    best = net.copy()
    N = Z.shape[0]
    loss_args = (config.beta, config.huber_form, config.reduction)
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        running = 0.0
        for s in range(0, N, config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, gW, gb = loss_and_grads(net, Z[idx], T[idx], *loss_args)
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite in epoch {epoch}", when=epoch)
            running += loss * idx.size
            opt.step([g for pair in zip(gW, gb) for g in pair])
        opt.lr *= config.lr_gamma
        full = batch_loss(net, Z, T, *loss_args) if config.selection == "full" else running / N
        if not np.isfinite(full):
            raise DivergenceError(f"training loss became non-finite in epoch {epoch}", when=epoch)
        hist.losses.append(full)
        if full < hist.best_loss:
            hist.best_loss, hist.best_epoch = full, epoch
            best = net.copy()
        log.info("epoch %d loss %.6g", epoch, full)
        if callback is not None:
            callback(epoch, full)
    max_twist = float(max(np.abs(samples.prev_twist).max(), np.abs(samples.sim_twist + samples.delta).max()))
    return ResidualModel(best, samples.normalizer, config, bound=config.bound_factor * max_twist, seed=seed), hist


def gradient_check(net, Z, T, n_check=64, step=1e-6, seed=0, beta=0.9, form="continuous", reduction="per-sample"):
    """Max relative error between analytic and central-difference weight
    gradients over a random subsample of ``n_check`` parameter entries."""
    if isinstance(net, ResidualModel):
        net = net.net
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    _, gW, gb = loss_and_grads(net, Z, T, beta, form, reduction)
    params = net.params
    grads = [g for pair in zip(gW, gb) for g in pair]
    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_check, offsets[-1]), replace=False)
    worst = 0.0
    for flat in np.sort(picks):
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = flat - offsets[i]
        p = params[i].reshape(-1)
        old = p[j]
        p[j] = old + step
        lp = batch_loss(net, Z, T, beta, form, reduction)
        p[j] = old - step
        lm = batch_loss(net, Z, T, beta, form, reduction)
        p[j] = old
        num = (lp - lm) / (2.0 * step)
        ana = grads[i].reshape(-1)[j]
        denom = max(abs(num), abs(ana), 1e-8)
        worst = max(worst, abs(num - ana) / denom)
    return worst


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualModel:
    net: MLP
    normalizer: Normalizer
    config: TrainConfig = field(default_factory=TrainConfig)
    bound: float = np.inf
    seed: int = 0

    def predict_delta(self, prev_twist, sim_twist, u):
        nz = self.normalizer
        Z = np.concatenate(
            [nz.normalize_twist(np.atleast_2d(prev_twist)), nz.normalize_twist(np.atleast_2d(sim_twist)),
             nz.normalize_input(np.atleast_2d(u))],
            axis=1,
        )
        return nz.denormalize_delta(self.net.forward(Z))

    def to_container(self, provenance=None, nominal=None):
        """``nominal`` (a :class:`~uvsysid.dynamics.FossenModel`) is embedded
        so the corrected simulator can be rebuilt from the file alone."""
        arrays = {}
        for i, (W, b) in enumerate(zip(self.net.weights, self.net.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        for k, v in self.normalizer.to_arrays().items():
            arrays[f"norm_{k}"] = v
        scalars = {"layers": len(self.net.weights), "bound": float(self.bound), "seed": int(self.seed)}
        config = {"train": self.config.to_dict()}
        if nominal is not None:
            config["nominal"] = {"params": nominal.params.to_dict(), "dt": nominal.dt}
        return container.Container("residual", arrays, scalars, config, provenance or {})

    @classmethod
    def from_container(cls, c):
        L = int(c.scalars["layers"])
        net = MLP([c.arrays[f"W{i}"] for i in range(L)], [c.arrays[f"b{i}"] for i in range(L)])
        norm = Normalizer.from_arrays({k[5:]: v for k, v in c.arrays.items() if k.startswith("norm_")})
        cfg = TrainConfig.from_dict(c.config.get("train", {}))
        return cls(net, norm, cfg, float(c.scalars["bound"]), int(c.scalars["seed"]))

    def save(self, path, provenance=None, nominal=None):
        container.save(path, self.to_container(provenance, nominal))

    @classmethod
    def load(cls, path):
        return cls.from_container(container.load(path, expect_kind="residual"))


def corrected_step(model, nominal, state, u):
    """One corrected step: nominal Euler twist plus the predicted residual,
    then the pose advanced with the corrected twist.

    ``model=None`` gives the plain nominal step with the same pose update.
    Raises :class:`InstabilityError` when any twist entry exceeds the bound.
    """
    x = np.asarray(state, dtype=float)
    X = np.atleast_2d(x)
    U = np.atleast_2d(np.asarray(u, dtype=float))
    nu_sim = nominal.twist_step(X, U)
    nu = nu_sim if model is None else nu_sim + model.predict_delta(X[:, core.TWIST], nu_sim, U)
    bound = np.inf if model is None else model.bound
    if not np.all(np.isfinite(nu)) or np.any(np.abs(nu) > bound):
        raise InstabilityError("corrected twist left the instability bound")
    out = np.concatenate([X[:, core.POSE], nu], axis=1)
    out[:, core.POSE] = X[:, core.POSE] + nominal.dt * kernels.pose_rates(out)
    out[:, core.ATT] = core.wrap_angle(out[:, core.ATT])
    core.check_gimbal(out)
    return out[0] if x.ndim == 1 else out


@dataclass(frozen=True)
class CorrectedSimulator:
    """Rollout wrapper: nominal simulator plus (optionally) a residual model.

    Batched, never raises on a bad window; unstable windows are frozen and
    flagged in the returned mask.
    """

    nominal: object
    model: ResidualModel | None = None
    name: str = "residual"

    @property
    def dt(self):
        return self.nominal.dt

    def step(self, state, u):
        return corrected_step(self.model, self.nominal, state, u)

    def rollout(self, X0, U):
        X = np.array(np.atleast_2d(X0), dtype=float)
        U = np.asarray(U, dtype=float)
        diverged = np.zeros(X.shape[0], dtype=bool)
        bound = np.inf if self.model is None else self.model.bound
        plim = core.pitch_limit()
        for k in range(U.shape[1]):
            live = ~diverged
            if not live.any():
                break
            Xl, Ul = X[live], U[live, k]
            with np.errstate(all="ignore"):
                nu_sim = self.nominal.twist_step(Xl, Ul)
                nu = nu_sim if self.model is None else nu_sim + self.model.predict_delta(Xl[:, core.TWIST], nu_sim, Ul)
                nxt = np.concatenate([Xl[:, core.POSE], nu], axis=1)
                nxt[:, core.POSE] = Xl[:, core.POSE] + self.dt * kernels.pose_rates(nxt)
            nxt[:, core.ATT] = core.wrap_angle(nxt[:, core.ATT])
            bad = (
                ~np.all(np.isfinite(nxt), axis=1)
                | np.any(np.abs(nxt[:, core.TWIST]) > bound, axis=1)
                | (np.abs(nxt[:, 4]) >= plim)
            )
            idx = np.flatnonzero(live)
            diverged[idx[bad]] = True
            X[idx[~bad]] = nxt[~bad]
        return X, diverged
