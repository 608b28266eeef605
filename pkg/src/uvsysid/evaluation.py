"""Open-loop evaluation: endpoint H-step RMSE, comparison tables, timing.

Every model handed to this module exposes ``rollout(X0, U) -> (X_H,
diverged)`` over a batch of windows (``X0`` is (W, 12), ``U`` is (W, H, m)).
A window starts at every sample whose ``start + H`` stays inside the same
segment; windows that would cross a cut are counted as skipped.  Angles enter
the endpoint error as wrapped differences.
"""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import core, kernels
from .errors import DimensionMismatchError, InvalidInputError, SegmentBoundaryError

DEFAULT_HORIZONS = (1, 10, 100)
SUBMETRICS = {"p": core.POS, "mu": core.ATT, "v": core.LIN, "omega": core.ANG}


@dataclass(frozen=True)
class IdentityModel:
    """Predicts that the state never changes."""

    name: str = "identity"

    def rollout(self, X0, U):
        X0 = np.array(np.atleast_2d(X0), dtype=float)
        return X0, np.zeros(X0.shape[0], dtype=bool)


# ---------------------------------------------------------------------------
# windows and errors
# ---------------------------------------------------------------------------


def gather_windows(ds, H):
    """``(X0, U, X_true, skipped)`` stacked over all valid start indices."""
    if H < 0:
        raise InvalidInputError("horizon must be non-negative")
    m = ds.n_inputs
    X0, U, XT = [], [], []
    skipped = 0
    for s in ds.segments:
        L = len(s)
        skipped += min(H, L)
        if L <= H:
            continue
        idx = np.arange(L - H)
        X0.append(s.states[idx])
        XT.append(s.states[idx + H])
        U.append(np.stack([s.inputs[idx + j] for j in range(H)], axis=1) if H else np.empty((idx.size, 0, m)))
    if not X0:
        return np.empty((0, core.N_STATE)), np.empty((0, H, m)), np.empty((0, core.N_STATE)), skipped
    return np.concatenate(X0), np.concatenate(U), np.concatenate(XT), skipped


def _check_model(model, ds):
    m = getattr(model, "n_inputs", None)
    if m is not None and ds.segments and m != ds.n_inputs:
        raise DimensionMismatchError(
            f"model {getattr(model, 'name', model)!r} expects {m} inputs, dataset has {ds.n_inputs}"
        )


def rollout(model, ds, start, H, segment=None):
    """Endpoint state after ``H`` open-loop steps from ground truth at ``start``.

    ``start`` is a flat sample index, or an offset within ``segment`` when that
    is given.  Raises :class:`SegmentBoundaryError` when the window would
    leave its segment, :class:`InstabilityError`-like numeric errors are
    reported through the ``diverged`` flag of the second return value.
    """
    _check_model(model, ds)
    seg, k = ds.locate(start) if segment is None else (segment, start)
    s = ds.segments[seg]
    if k < 0 or k + H >= len(s):
        raise SegmentBoundaryError(f"window [{k}, {k + H}] leaves segment {seg} (length {len(s)})")
    x0 = s.states[k]
    if H == 0:
        return x0.copy(), False
    X, div = model.rollout(x0[None], s.inputs[k : k + H][None])
    return X[0], bool(div[0])


def endpoint_errors(model, ds, H):
    """``(errors, n_windows, n_divergent, n_skipped)``; ``errors`` holds one
    wrapped 12-vector per non-divergent window."""
    _check_model(model, ds)
    X0, U, XT, skipped = gather_windows(ds, H)
    if X0.shape[0] == 0:
        return np.empty((0, core.N_STATE)), 0, 0, skipped
    if H == 0:
        Xh, div = X0.copy(), np.zeros(X0.shape[0], dtype=bool)
    else:
        Xh, div = model.rollout(X0, U)
    ok = ~np.asarray(div, dtype=bool)
    return core.state_error(XT[ok], Xh[ok]), int(X0.shape[0]), int((~ok).sum()), skipped


def rmse_from_errors(E, dims=None):
    E = np.asarray(E, dtype=float)
    if dims is not None:
        E = E[:, dims]
    if E.shape[0] == 0:
        raise InvalidInputError("no valid window to average over")
    return float(np.sqrt(np.sum(E * E) / (E.shape[0] * E.shape[1])))


def rmse_h(model, ds, H):
    """Endpoint H-step RMSE over every valid window, divided by ``W * 12``."""
    E, _, _, _ = endpoint_errors(model, ds, H)
    return rmse_from_errors(E)


def submetrics(E):
    return {k: rmse_from_errors(E, sl) for k, sl in SUBMETRICS.items()}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class HorizonResult:
    H: int
    rmse: float
    sub: dict
    windows: int
    divergent: int
    skipped: int


@dataclass
class RolloutReport:
    model: str
    horizons: list
    results: list = field(default_factory=list)
    rollout_time: float | None = None
    fit_time: float | None = None

    def rmse(self, H):
        for r in self.results:
            if r.H == H:
                return r.rmse
        raise KeyError(H)

    def result(self, H):
        for r in self.results:
            if r.H == H:
                return r
        raise KeyError(H)

    def records(self):
        out = []
        for r in self.results:
            rec = {"model": self.model, **asdict(r)}
            rec["rollout_time"] = self.rollout_time
            rec["fit_time"] = self.fit_time
            out.append(rec)
        return out


def _model_name(model, i):
    return getattr(model, "name", None) or f"model{i}"


def evaluate(model, ds, horizons=DEFAULT_HORIZONS, name=None):
    report = RolloutReport(name or _model_name(model, 0), list(horizons))
    for H in horizons:
        E, W, nd, sk = endpoint_errors(model, ds, H)
        if E.shape[0]:
            res = HorizonResult(int(H), rmse_from_errors(E), submetrics(E), W, nd, sk)
        else:
            res = HorizonResult(int(H), float("nan"), {k: float("nan") for k in SUBMETRICS}, W, nd, sk)
        report.results.append(res)
    return report


def compare_report(models, ds, horizons=DEFAULT_HORIZONS, names=None):
    """One :class:`RolloutReport` per model over a shared dataset."""
    names = names or [_model_name(m, i) for i, m in enumerate(models)]
    return [evaluate(m, ds, horizons, n) for m, n in zip(models, names)]


def format_table(reports):
    """Aligned plain-text table: overall RMSE per horizon, then the
    p / mu / v / omega split, then window and divergence counts."""
    if not reports:
        return ""
    horizons = reports[0].horizons
    head = ["model"] + [f"H={H}" for H in horizons]
    rows = [[r.model] + [f"{res.rmse:.4f}" for res in r.results] for r in reports]
    lines = _align(head, rows)
    lines.append("")
    head2 = ["model", "H"] + list(SUBMETRICS) + ["windows", "divergent", "skipped"]
    rows2 = []
    for r in reports:
        for res in r.results:
            rows2.append(
                [r.model, str(res.H)]
                + [f"{res.sub[k]:.4f}" for k in SUBMETRICS]
                + [str(res.windows), str(res.divergent), str(res.skipped)]
            )
    lines += _align(head2, rows2)
    lines.append("")
    lines.append("angles are compared as wrapped differences; divergent windows are excluded from RMSE")
    return "\n".join(lines) + "\n"


def _align(head, rows):
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))  # noqa: E731
    return [fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]


def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def report_records(reports):
    return [_jsonable(rec) for r in reports for rec in r.records()]


def write_report(reports, out_dir, stem="report", provenance=None):
    """Write ``<stem>.txt`` and ``<stem>.json``; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    txt = os.path.join(out_dir, f"{stem}.txt")
    js = os.path.join(out_dir, f"{stem}.json")
    header = ""
    if provenance is not None:
        header = "".join(f"# {line}\n" for line in json.dumps(provenance, sort_keys=True, indent=1).splitlines())
    with open(txt, "w", encoding="utf-8") as fh:
        fh.write(header + format_table(reports))
    with open(js, "w", encoding="utf-8") as fh:
        json.dump({"provenance": provenance or {}, "records": report_records(reports)}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return txt, js


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def trajectory(model, ds, segment=0, start=0, H=None):
    """Ground-truth and predicted open-loop trajectories ``(t, X_true, X_pred)``
    over ``H`` steps (default: the rest of the segment)."""
    s = ds.segments[segment]
    H = len(s) - 1 - start if H is None else H
    if start + H >= len(s):
        raise SegmentBoundaryError("plot window leaves its segment")
    pred = [s.states[start]]
    x = s.states[start][None]
    for k in range(H):
        x, div = model.rollout(x, s.inputs[start + k][None, None])
        if div[0]:
            pred.extend([np.full(core.N_STATE, np.nan)] * (H - k))
            break
        pred.append(x[0])
    return s.t[start : start + H + 1], s.states[start : start + H + 1], np.array(pred)


def write_plot_data(models, ds, path, segment=0, start=0, H=None):
    """CSV with time, true x/y/z and predicted x/y/z per model: enough for a
    top view (x-y) and a depth-versus-time plot."""
    cols, data = ["t", "x_true", "y_true", "z_true"], None
    for i, m in enumerate(models):
        t, XT, XP = trajectory(m, ds, segment, start, H)
        if data is None:
            data = [t, XT[:, 0], XT[:, 1], XT[:, 2]]
        name = _model_name(m, i)
        cols += [f"x_{name}", f"y_{name}", f"z_{name}"]
        data += [XP[:, 0], XP[:, 1], XP[:, 2]]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in np.column_stack(data):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def environment_description():
    return {
        "python": platform.python_version(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "system": platform.system(),
        "cpus": os.cpu_count(),
        "numpy": np.__version__,
        "numba_enabled": kernels.NUMBA_ENABLED,
    }


@dataclass
class TimingSummary:
    model: str
    H: int
    repetitions: int
    rollout_median: float
    rollout_spread: float
    per_step: float
    fit_median: float | None = None
    fit_spread: float | None = None
    environment: dict = field(default_factory=environment_description)


def _time(fn, repetitions):
    out = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return np.array(out)


def bench_timing(model, ds, H, repetitions=3, fit=None, windows=1):
    """Median and spread (max - min) of the wall time for one ``H``-step
    rollout over ``windows`` start indices, single-threaded.  ``fit`` is an
    optional zero-argument callable timed the same way."""
    if repetitions < 3:
        raise InvalidInputError("bench_timing needs at least 3 repetitions")
    X0, U, _, _ = gather_windows(ds, H)
    if X0.shape[0] == 0:
        raise InvalidInputError(f"no window of length {H} in the dataset")
    X0, U = X0[:windows], U[:windows]
    with threadpool_limits(limits=1):
        model.rollout(X0, U)  # warm-up (JIT, caches)
        roll = _time(lambda: model.rollout(X0, U), repetitions)
        fits = _time(fit, repetitions) if fit is not None else None
    med = float(np.median(roll))
    return TimingSummary(
        model=_model_name(model, 0),
        H=int(H),
        repetitions=int(repetitions),
        rollout_median=med,
        rollout_spread=float(np.ptp(roll)),
        per_step=med / max(H, 1),
        fit_median=None if fits is None else float(np.median(fits)),
        fit_spread=None if fits is None else float(np.ptp(fits)),
    )


def koopman_cost_scaling(dims=(112, 262, 512), m=8, H=2000, repetitions=7, seed=0):
    """Time the single-trajectory lifted rollout for several lifted sizes and
    fit ``time = c * d**p``.  Returns ``(dims, median_times, p)``."""
    rng = np.random.default_rng(seed)
    times = []
    with threadpool_limits(limits=1):
        for d in dims:
            A = rng.standard_normal((d, d))
            A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
            B = rng.standard_normal((d, m))
            z0 = rng.standard_normal(d)
            U = rng.uniform(-1, 1, size=(H, m))
            kernels.lifted_rollout(A, B, z0, U[:2])
            times.append(float(np.median(_time(lambda: kernels.lifted_rollout(A, B, z0, U), repetitions))))
    p = float(np.polyfit(np.log(dims), np.log(times), 1)[0])
    return list(dims), times, p
