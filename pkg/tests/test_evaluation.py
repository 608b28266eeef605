import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from uvsysid import core, dynamics as dy, evaluation as ev, koopman as kp
from uvsysid.errors import DimensionMismatchError, InvalidInputError, SegmentBoundaryError
from uvsysid.ingest import Dataset, Segment


class OffsetModel:
    """Endpoint = start state + a fixed offset, regardless of H."""

    name = "offset"

    def __init__(self, e):
        self.e = np.asarray(e, dtype=float)

    def rollout(self, X0, U):
        return np.asarray(X0) + self.e, np.zeros(len(X0), dtype=bool)


class ShiftModel:
    """Endpoint = start state advanced with a per-step drift on x."""

    name = "shift"

    def rollout(self, X0, U):
        X = np.array(X0, dtype=float)
        X[:, 0] += 0.01 * U.shape[1] + U[:, :, 0].sum(axis=1)
        return X, np.zeros(len(X), dtype=bool)


def _naive_rmse(model, ds, H):
    total, count = 0.0, 0
    for s in ds.segments:
        for k in range(len(s) - H):
            pred, _ = model.rollout(s.states[k][None], s.inputs[k : k + H][None])
            e = core.state_error(s.states[k + H], pred[0])
            for j in range(12):
                total += e[j] ** 2
                count += 1
    return np.sqrt(total / count)


def test_identity_h0_and_perfect_model():
    ds = random_dataset(lengths=(20,))
    assert ev.rmse_h(ev.IdentityModel(), ds, 0) == 0.0
    x, div = ev.rollout(ev.IdentityModel(), ds, 3, 0)
    assert np.array_equal(x, ds.segments[0].states[3]) and not div


def test_identity_endpoint_is_start():
    ds = random_dataset(lengths=(20,))
    x, _ = ev.rollout(ev.IdentityModel(), ds, 4, 7)
    assert np.array_equal(x, ds.segments[0].states[4])


def test_constant_offset_rmse_is_abs_e():
    X = np.zeros((9, 12))
    ds = Dataset([Segment(np.arange(9) * 0.02, X, np.zeros((9, 2)))], 0.02)
    r = ev.rmse_h(OffsetModel(np.full(12, -0.37)), ds, 4)  # 5 windows
    assert r == 0.37


def test_rmse_matches_naive_double_loop():
    ds = random_dataset(seed=3, lengths=(9,), m=2)  # H = 4 gives five windows
    model = ShiftModel()
    assert ev.endpoint_errors(model, ds, 4)[1] == 5
    assert abs(ev.rmse_h(model, ds, 4) - _naive_rmse(model, ds, 4)) < 1e-12


def test_rmse_wraps_angles():
    X = np.zeros((3, 12))
    X[:, 5] = np.pi - 0.05
    ds = Dataset([Segment(np.arange(3) * 0.02, X, np.zeros((3, 1)))], 0.02)
    m = OffsetModel(np.r_[np.zeros(5), 0.1, np.zeros(6)])
    E, *_ = ev.endpoint_errors(m, ds, 1)
    np.testing.assert_allclose(E[:, 5], -0.1, atol=1e-12)


def test_window_counts_and_skips():
    ds = random_dataset(lengths=(30, 10, 5))
    E, W, nd, sk = ev.endpoint_errors(ev.IdentityModel(), ds, 8)
    assert W == 22 + 2 + 0
    assert sk == 8 + 8 + 5
    assert nd == 0


def test_fewer_windows_at_longer_horizon():
    ds = random_dataset(lengths=(100,))
    counts = [ev.endpoint_errors(ev.IdentityModel(), ds, H)[1] for H in (1, 10, 50)]
    assert counts == [99, 90, 50]


def test_divergent_windows_excluded():
    class Half:
        name = "half"

        def rollout(self, X0, U):
            div = np.arange(len(X0)) % 2 == 0
            X = np.array(X0)
            X[div] = np.nan
            return X, div

    ds = random_dataset(lengths=(12,))
    E, W, nd, _ = ev.endpoint_errors(Half(), ds, 2)
    assert (W, nd, E.shape[0]) == (10, 5, 5)
    assert np.all(np.isfinite(E))


def test_rollout_segment_boundary():
    ds = random_dataset(lengths=(10, 10))
    with pytest.raises(SegmentBoundaryError):
        ev.rollout(ev.IdentityModel(), ds, 5, 6)
    ev.rollout(ev.IdentityModel(), ds, 10, 9)


def test_dimension_mismatch():
    ds = random_dataset(lengths=(10,), m=3)
    di = dy.DIModel(np.zeros((3, 4)), np.zeros((3, 4)), 0.02)
    with pytest.raises(DimensionMismatchError):
        ev.rmse_h(di, ds, 1)


def test_empty_windows_rmse_error():
    ds = random_dataset(lengths=(5,))
    with pytest.raises(InvalidInputError):
        ev.rmse_h(ev.IdentityModel(), ds, 10)


def test_submetrics_split():
    e = np.r_[np.full(3, 1.0), np.full(3, 2.0), np.full(3, 3.0), np.full(3, 4.0)]
    X = np.zeros((4, 12))
    ds = Dataset([Segment(np.arange(4) * 0.02, X, np.zeros((4, 1)))], 0.02)
    E, *_ = ev.endpoint_errors(OffsetModel(-e), ds, 1)
    sub = ev.submetrics(E)
    assert sub == pytest.approx({"p": 1.0, "mu": 2.0, "v": 3.0, "omega": 4.0})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 6))
def test_rmse_square_is_mean_of_submetric_squares(seed, H):
    ds = random_dataset(seed=seed, lengths=(15, 12))
    E, *_ = ev.endpoint_errors(ShiftModel(), ds, H)
    sub = ev.submetrics(E)
    total = ev.rmse_from_errors(E)
    assert total**2 == pytest.approx(np.mean([v**2 for v in sub.values()]), rel=1e-12)


def test_compare_report_perfect_row_and_files(tmp_path):
    ds = random_dataset(lengths=(40,))
    reports = ev.compare_report([ev.IdentityModel(), ShiftModel()], ds, horizons=(0, 1, 10))
    assert [r.rmse(0) for r in reports] == [0.0, 0.0]
    assert reports[1].rmse(10) > 0
    txt, js = ev.write_report(reports, tmp_path, "r", provenance={"seed": 1})
    text = open(txt).read()
    assert "H=10" in text and "omega" in text and "divergent" in text
    doc = json.load(open(js))
    assert len(doc["records"]) == 6 and doc["provenance"] == {"seed": 1}


def test_report_handles_empty_horizon(tmp_path):
    ds = random_dataset(lengths=(5,))
    rep = ev.evaluate(ev.IdentityModel(), ds, horizons=(1, 10))
    assert np.isnan(rep.rmse(10))
    _, js = ev.write_report([rep], tmp_path)
    assert json.load(open(js))["records"][1]["rmse"] is None


def test_plot_data(tmp_path):
    ds = random_dataset(lengths=(30,))
    path = ev.write_plot_data([ev.IdentityModel(), ShiftModel()], ds, tmp_path / "p.csv", H=10)
    lines = open(path).read().splitlines()
    assert lines[0].split(",")[:4] == ["t", "x_true", "y_true", "z_true"]
    assert len(lines) == 12


def test_bench_timing_identity():
    ds = random_dataset(lengths=(200,))
    t = ev.bench_timing(ev.IdentityModel(), ds, 100, repetitions=3)
    assert t.per_step < 1e-3
    assert t.environment["cpus"] >= 1
    with pytest.raises(InvalidInputError):
        ev.bench_timing(ev.IdentityModel(), ds, 100, repetitions=2)


def test_koopman_rollout_path_single_lift():
    ds = random_dataset(lengths=(60,), m=2)
    model = kp.edmdc_fit(ds, K=5)
    calls = []

    class Counting(kp.KoopmanModel):
        def lift(self, x):
            calls.append(1)
            return super().lift(x)

    counted = Counting(model.dictionary, model.A, model.B, model.lam, model.dt)
    ev.rollout(counted, ds, 0, 20)
    assert len(calls) == 1
