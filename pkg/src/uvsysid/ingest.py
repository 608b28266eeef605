"""Log loading, cleaning, zero-order-hold resampling and dataset handling.

The on-disk format is a UTF-8 CSV with one header row.  Lines starting with
``#`` are treated as comments; the toolkit uses them for provenance headers.
Required columns are ``t``, the twelve state names and ``u1..um``; an optional
integer ``segment`` column carries manual cut lists.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core
from .errors import (
    DataError,
    DegenerateFeatureError,
    EmptyLogError,
    InvalidInputError,
    SchemaError,
)

SCHEMA_VERSION = 1
_INPUT_RE = re.compile(r"^u(\d+)$")


@dataclass(frozen=True)
class ColumnSchema:
    """Column names of a log file.

    ``inputs=None`` means "every ``u<k>`` column present, in numeric order".
    """

    version: int = SCHEMA_VERSION
    time: str = "t"
    state: tuple = core.STATE_NAMES
    inputs: tuple | None = None
    segment: str = "segment"

    @classmethod
    def from_file(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read schema file {path}: {exc}") from exc
        if "version" not in raw:
            raise SchemaError(f"schema file {path} has no 'version' key")
        if raw["version"] != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {raw['version']}")
        state = tuple(raw.get("state", core.STATE_NAMES))
        if len(state) != core.N_STATE:
            raise SchemaError(f"schema must name {core.N_STATE} state columns")
        inputs = raw.get("inputs")
        return cls(
            version=raw["version"],
            time=raw.get("time", "t"),
            state=state,
            inputs=tuple(inputs) if inputs is not None else None,
            segment=raw.get("segment", "segment"),
        )

    def resolve_inputs(self, header):
        if self.inputs is not None:
            return tuple(self.inputs)
        found = sorted((int(m.group(1)), h) for h in header if (m := _INPUT_RE.match(h)))
        return tuple(h for _, h in found)


@dataclass
class CleaningReport:
    rows_in: int = 0
    nans_dropped: int = 0
    duplicates_dropped: int = 0
    reordered: int = 0
    rows_out: int = 0
    segments_out: int | None = None
    short_segments_dropped: int = 0

    def to_dict(self):
        return dict(self.__dict__)

    def text(self):
        lines = [
            f"rows in:             {self.rows_in}",
            f"NaN rows dropped:    {self.nans_dropped}",
            f"duplicates dropped:  {self.duplicates_dropped}",
            f"rows out of order:   {self.reordered}",
            f"rows out:            {self.rows_out}",
        ]
        if self.segments_out is not None:
            lines.append(f"segments out:        {self.segments_out}")
            lines.append(f"short segments cut:  {self.short_segments_dropped}")
        return "\n".join(lines) + "\n"


@dataclass
class RawLog:
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    lines: np.ndarray
    segment: np.ndarray | None = None
    source: str = ""
    report: CleaningReport | None = None

    def __len__(self):
        return self.t.shape[0]


@dataclass
class Segment:
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    def __len__(self):
        return self.t.shape[0]

    @property
    def twists(self):
        return self.states[:, core.TWIST]

    def slice(self, start, stop):
        return Segment(self.t[start:stop].copy(), self.states[start:stop].copy(), self.inputs[start:stop].copy())


@dataclass
class Dataset:
    segments: list
    dt: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.segments = [s for s in self.segments if len(s) > 0]
        ms = {s.inputs.shape[1] for s in self.segments}
        if len(ms) > 1:
            raise DataError(f"inconsistent input widths across segments: {sorted(ms)}")

    @property
    def n_inputs(self):
        return self.segments[0].inputs.shape[1] if self.segments else 0

    @property
    def n_samples(self):
        return sum(len(s) for s in self.segments)

    @property
    def lengths(self):
        return [len(s) for s in self.segments]

    def states(self):
        return np.concatenate([s.states for s in self.segments]) if self.segments else np.empty((0, core.N_STATE))

    def inputs(self):
        return np.concatenate([s.inputs for s in self.segments]) if self.segments else np.empty((0, 0))

    def snapshot_pairs(self):
        """``(X, U, Y)`` row-stacked snapshot triples, never across segment cuts."""
        X, U, Y = [], [], []
        for s in self.segments:
            if len(s) < 2:
                continue
            X.append(s.states[:-1])
            U.append(s.inputs[:-1])
            Y.append(s.states[1:])
        if not X:
            raise EmptyLogError("dataset has no snapshot pairs")
        return np.concatenate(X), np.concatenate(U), np.concatenate(Y)

    def windows(self, H):
        """All ``(segment_index, start)`` pairs with ``start + H`` inside the segment."""
        return [(i, k) for i, s in enumerate(self.segments) for k in range(len(s) - H)]

    def locate(self, index):
        """Map a flat sample index to ``(segment_index, offset)``."""
        if index < 0:
            raise InvalidInputError("sample index must be non-negative")
        for i, s in enumerate(self.segments):
            if index < len(s):
                return i, index
            index -= len(s)
        raise InvalidInputError("sample index beyond the end of the dataset")

    def concat(self, other):
        if abs(self.dt - other.dt) > 1e-12:
            raise DataError("cannot concatenate datasets with different sample periods")
        return Dataset(self.segments + other.segments, self.dt, dict(self.metadata))

    # -- file I/O ----------------------------------------------------------

    def to_csv(self, path, provenance=None):
        m = self.n_inputs
        header = ["t", *core.STATE_NAMES, *(f"u{j + 1}" for j in range(m)), "segment"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if provenance is not None:
                for line in json.dumps(provenance, sort_keys=True, indent=1).splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, s in enumerate(self.segments):
                block = np.column_stack([s.t, s.states, s.inputs])
                for row in block:
                    w.writerow([repr(float(v)) for v in row] + [i])

    @classmethod
    def from_csv(cls, path, schema=None, rate=None, gap_periods=5.0):
        """Load a dataset file.  The file is cleaned and resampled to ``rate``
        (default: the inverse of its median sample time)."""
        log = clean(load_log(path, schema))
        if rate is None:
            dts = np.diff(log.t)
            dts = dts[dts > 0]
            if dts.size == 0:
                raise EmptyLogError(f"{path}: cannot infer sample rate")
            rate = 1.0 / float(np.median(dts))
            rate = float(np.round(rate, 6))
        return resample(log, rate, gap_periods=gap_periods)


def _parse_cell(text, line, column):
    s = text.strip()
    if s == "" or s.lower() in ("nan", "na", "null"):
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise SchemaError(f"column {column!r}: cannot parse {text!r} as a number", line=line) from None


def load_log(path, schema=None):
    """Read a raw log into memory, keeping source line numbers."""
    schema = schema or ColumnSchema()
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot open log {path}: {exc}") from exc
    with fh:
        header, header_line = None, 0
        rows, lines = [], []
        reader = csv.reader(fh)
        for row in reader:
            lineno = reader.line_num
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if header is None:
                header, header_line = [h.strip() for h in row], lineno
                continue
            rows.append(row)
            lines.append(lineno)
    if header is None:
        raise SchemaError(f"{path}: no header row")
    inputs = schema.resolve_inputs(header)
    if not inputs:
        raise SchemaError("no input columns (u1..um) found", line=header_line)
    required = [schema.time, *schema.state, *inputs]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing columns: {', '.join(missing)}", line=header_line)
    idx = [header.index(c) for c in required]
    seg_idx = header.index(schema.segment) if schema.segment in header else None

    n = len(rows)
    data = np.empty((n, len(required)))
    segment = np.empty(n, dtype=np.int64) if seg_idx is not None else None
    for r, (row, lineno) in enumerate(zip(rows, lines)):
        if len(row) != len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
        for c, j in enumerate(idx):
            data[r, c] = _parse_cell(row[j], lineno, required[c])
        if seg_idx is not None:
            val = _parse_cell(row[seg_idx], lineno, schema.segment)
            if not np.isfinite(val) or val != int(val):
                raise SchemaError(f"segment id {row[seg_idx]!r} is not an integer", line=lineno)
            segment[r] = int(val)
    return RawLog(
        t=data[:, 0].copy(),
        states=data[:, 1:13].copy(),
        inputs=data[:, 13:].copy(),
        lines=np.asarray(lines, dtype=np.int64),
        segment=segment,
        source=str(path),
    )


def clean(log):
    """Drop NaN rows, sort by time, collapse duplicate timestamps to the last row."""
    report = CleaningReport(rows_in=len(log))
    finite = np.isfinite(log.t) & np.all(np.isfinite(log.states), axis=1) & np.all(np.isfinite(log.inputs), axis=1)
    report.nans_dropped = int(np.count_nonzero(~finite))
    keep = np.flatnonzero(finite)
    t = log.t[keep]
    order = np.argsort(t, kind="stable")
    report.reordered = int(np.count_nonzero(order != np.arange(order.size)))
    keep = keep[order]
    t = log.t[keep]
    last = np.ones(t.size, dtype=bool)
    last[:-1] = t[1:] != t[:-1]
    report.duplicates_dropped = int(np.count_nonzero(~last))
    keep = keep[last]
    report.rows_out = int(keep.size)
    if keep.size == 0:
        raise EmptyLogError(f"{log.source or 'log'}: no rows left after cleaning")
    return RawLog(
        t=log.t[keep],
        states=log.states[keep],
        inputs=log.inputs[keep],
        lines=log.lines[keep],
        segment=log.segment[keep] if log.segment is not None else None,
        source=log.source,
        report=report,
    )


def _validate_block(states, inputs, lines):
    states[:, core.ATT] = core.wrap_angle(states[:, core.ATT])
    bad = np.flatnonzero(np.any(np.abs(inputs) > 1.0, axis=1))
    if bad.size:
        raise DataError(f"line {int(lines[bad[0]])}: control channel outside [-1, 1]")
    plim = core.pitch_limit()
    bad = np.flatnonzero(np.abs(states[:, 4]) >= plim)
    if bad.size:
        raise DataError(f"line {int(lines[bad[0]])}: pitch beyond the gimbal guard")


def resample(log, rate, gap_periods=5.0, cuts=None):
    """Zero-order-hold resampling onto a uniform ``1/rate`` grid.

    Each output tick takes the latest row at or before it.  Raw gaps longer
    than ``gap_periods`` sample periods, changes of the ``segment`` column and
    the optional ``cuts`` (timestamps) all start a new segment.
    """
    if rate <= 0:
        raise InvalidInputError("rate must be positive")
    period = 1.0 / rate
    t = log.t
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise DataError("resample needs a cleaned log (strictly increasing timestamps)")
    brk = np.zeros(t.size, dtype=bool)
    brk[1:] = np.diff(t) > gap_periods * period
    if log.segment is not None:
        brk[1:] |= log.segment[1:] != log.segment[:-1]
    for c in cuts or ():
        j = int(np.searchsorted(t, c, side="left"))
        if 0 < j < t.size:
            brk[j] = True
    starts = np.flatnonzero(brk).tolist()
    bounds = list(zip([0, *starts], [*starts, t.size]))

    report = log.report or CleaningReport(rows_in=len(log), rows_out=len(log))
    segments, short = [], 0
    for a, b in bounds:
        tc = t[a:b]
        n = int(np.floor((tc[-1] - tc[0]) * rate + 1e-9)) + 1
        if n < 2:
            short += 1
            continue
        ticks = tc[0] + np.arange(n) / rate
        pick = np.searchsorted(tc, ticks + 1e-9 * period, side="right") - 1
        states = log.states[a:b][pick].copy()
        inputs = log.inputs[a:b][pick].copy()
        _validate_block(states, inputs, log.lines[a:b][pick])
        segments.append(Segment(ticks, states, inputs))
    if not segments:
        raise EmptyLogError(f"{log.source or 'log'}: shorter than one sample period at {rate} Hz")
    report.segments_out = len(segments)
    report.short_segments_dropped = short
    meta = {"source": log.source, "rate": rate, "gap_periods": gap_periods, "cleaning": report.to_dict()}
    return Dataset(segments, period, meta)


def derive_twists(segment, dt):
    """Body twists from pose samples by central differences.

    Angle differences are wrapped.  Linear velocity is rotated into the body
    frame with ``R(mu).T``; angular velocity follows the small-angle
    kinematics (``omega = d(mu)/dt``) used everywhere else in the package.
    """
    pose = segment.states[:, core.POSE]
    L = pose.shape[0]
    if L < 2:
        raise DataError("need at least two samples to differentiate")
    d = np.empty_like(pose)

    def delta(a, b):
        out = a - b
        out[..., 3:6] = core.wrap_angle(out[..., 3:6])
        return out

    if L > 2:
        d[1:-1] = delta(pose[2:], pose[:-2]) / (2.0 * dt)
    d[0] = delta(pose[1:2], pose[0:1])[0] / dt
    d[-1] = delta(pose[-1:], pose[-2:-1])[0] / dt
    R = core.euler_to_rotation(pose[:, 3:6])
    states = segment.states.copy()
    states[:, core.LIN] = np.einsum("kji,kj->ki", R, d[:, 0:3])
    states[:, core.ANG] = d[:, 3:6]
    return Segment(segment.t.copy(), states, segment.inputs.copy())


def with_derived_twists(ds):
    return Dataset([derive_twists(s, ds.dt) for s in ds.segments], ds.dt, dict(ds.metadata))


def split_chronological(ds, train_fraction=0.8):
    """First ``floor(fraction * N)`` samples to train, the rest to test.

    The segment that straddles the boundary is cut in two.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError("train_fraction must lie in (0, 1)")
    n_train = int(np.floor(train_fraction * ds.n_samples))
    train, test, seen = [], [], 0
    for s in ds.segments:
        L = len(s)
        if seen + L <= n_train:
            train.append(s)
        elif seen >= n_train:
            test.append(s)
        else:
            cut = n_train - seen
            train.append(s.slice(0, cut))
            test.append(s.slice(cut, L))
        seen += L
    meta = dict(ds.metadata)
    return (
        Dataset(train, ds.dt, {**meta, "split": "train", "train_fraction": train_fraction}),
        Dataset(test, ds.dt, {**meta, "split": "test", "train_fraction": train_fraction}),
    )


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

TWIST_NAMES = core.STATE_NAMES[6:]


def _stats(x, names, prefix):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise DegenerateFeatureError(f"{prefix}{names[j]}")
    return mean, std


@dataclass(frozen=True)
class Normalizer:
    twist_mean: np.ndarray
    twist_std: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray

    @classmethod
    def fit(cls, real_twists, sim_twists, inputs, residual_error=DegenerateFeatureError):
        real = np.asarray(real_twists, dtype=float)
        sim = np.asarray(sim_twists, dtype=float)
        u = np.asarray(inputs, dtype=float)
        if real.shape != sim.shape or real.shape[0] != u.shape[0]:
            raise InvalidInputError("real twists, simulated twists and inputs must be row-aligned")
        if real.shape[0] == 0:
            raise InvalidInputError("cannot fit a normalizer on an empty dataset")
        tm, ts = _stats(np.concatenate([real, sim]), TWIST_NAMES, "twist ")
        names = [f"u{j + 1}" for j in range(u.shape[1])]
        um, us = _stats(u, names, "input ")
        try:
            dm, dsd = _stats(real - sim, TWIST_NAMES, "residual ")
        except DegenerateFeatureError as exc:
            raise residual_error(exc.feature) from None
        return cls(tm, ts, um, us, dm, dsd)

    def normalize_twist(self, nu):
        return (np.asarray(nu) - self.twist_mean) / self.twist_std

    def denormalize_twist(self, z):
        return np.asarray(z) * self.twist_std + self.twist_mean

    def normalize_input(self, u):
        return (np.asarray(u) - self.input_mean) / self.input_std

    def denormalize_input(self, z):
        return np.asarray(z) * self.input_std + self.input_mean

    def normalize_delta(self, d):
        return (np.asarray(d) - self.delta_mean) / self.delta_std

    def denormalize_delta(self, z):
        return np.asarray(z) * self.delta_std + self.delta_mean

    def to_arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_arrays(cls, arrays):
        return cls(**{k: np.asarray(arrays[k], dtype=float) for k in cls.__dataclass_fields__})


def fit_normalizer(ds, sim_twists):
    """Fit z-score statistics for the residual learning problem.

    ``sim_twists`` is row-aligned with ``ds`` (either one ``(N, 6)`` array or
    one array per segment).  Twist statistics pool real and simulated twists;
    residual statistics are element-wise over ``real - sim``.
    """
    if ds.n_samples == 0:
        raise InvalidInputError("empty dataset")
    if isinstance(sim_twists, (list, tuple)):
        sim = np.concatenate([np.asarray(s, dtype=float) for s in sim_twists])
    else:
        sim = np.asarray(sim_twists, dtype=float)
    real = ds.states()[:, core.TWIST]
    if sim.shape != real.shape:
        raise InvalidInputError(f"sim_twists shape {sim.shape} does not match dataset {real.shape}")
    return Normalizer.fit(real, sim, ds.inputs())
