import numpy as np
import pytest

from uvsysid import core
from uvsysid.ingest import Dataset, Segment


def write_log(path, t, states=None, inputs=None, extra_cols=None, m=2):
    t = np.asarray(t, dtype=float)
    n = t.size
    states = np.zeros((n, core.N_STATE)) if states is None else np.asarray(states, dtype=float)
    inputs = np.zeros((n, m)) if inputs is None else np.asarray(inputs, dtype=float)
    header = ["t", *core.STATE_NAMES, *(f"u{j + 1}" for j in range(inputs.shape[1]))]
    cols = [t[:, None], states, inputs]
    if extra_cols:
        for name, values in extra_cols.items():
            header.append(name)
            cols.append(np.asarray(values, dtype=float)[:, None])
    block = np.hstack(cols)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in block:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def random_dataset(seed=0, lengths=(50,), m=3, dt=0.02, scale=0.3):
    rng = np.random.default_rng(seed)
    segs, t0 = [], 0.0
    for L in lengths:
        X = rng.normal(size=(L, core.N_STATE)) * scale
        X[:, core.ATT] = core.wrap_angle(X[:, core.ATT])
        X[:, 4] = np.clip(X[:, 4], -1.0, 1.0)
        U = rng.uniform(-1, 1, size=(L, m))
        t = t0 + np.arange(L) * dt
        segs.append(Segment(t, X, U))
        t0 = t[-1] + 1.0
    return Dataset(segs, dt)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
