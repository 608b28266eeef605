import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset, write_log
from uvsysid import core, ingest
from uvsysid.errors import DataError, DegenerateFeatureError, EmptyLogError, InvalidInputError, SchemaError


def test_load_three_rows(tmp_path):
    log = ingest.load_log(write_log(tmp_path / "a.csv", [0.0, 0.02, 0.04]))
    assert len(log) == 3
    assert log.inputs.shape == (3, 2)
    assert log.lines.tolist() == [2, 3, 4]


def test_load_non_numeric_cell_reports_line(tmp_path):
    p = write_log(tmp_path / "a.csv", [0.0, 0.02, 0.04])
    lines = p.read_text().splitlines()
    lines[2] = lines[2].replace("0.0", "abc", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError) as info:
        ingest.load_log(p)
    assert info.value.line == 3


def test_load_out_of_order_accepted(tmp_path):
    log = ingest.load_log(write_log(tmp_path / "a.csv", [0.04, 0.0, 0.02]))
    assert log.t.tolist() == [0.04, 0.0, 0.02]


def test_load_missing_column(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("t,x,u1\n0,0,0\n")
    with pytest.raises(SchemaError, match="missing columns"):
        ingest.load_log(p)


def test_load_skips_comment_lines(tmp_path):
    p = write_log(tmp_path / "a.csv", [0.0, 0.02])
    p.write_text("# provenance\n" + p.read_text())
    assert len(ingest.load_log(p)) == 2


def test_schema_file_needs_version(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"time": "t"}')
    with pytest.raises(SchemaError):
        ingest.ColumnSchema.from_file(p)
    p.write_text('{"version": 1, "time": "time"}')
    assert ingest.ColumnSchema.from_file(p).time == "time"


def test_clean_already_clean(tmp_path):
    log = ingest.load_log(write_log(tmp_path / "a.csv", np.arange(5) * 0.02))
    out = ingest.clean(log)
    assert np.array_equal(out.t, log.t)
    r = out.report
    assert (r.nans_dropped, r.duplicates_dropped, r.reordered) == (0, 0, 0)


def test_clean_duplicate_timestamp_keeps_one(tmp_path):
    X = np.zeros((3, 12))
    X[:, 0] = [1.0, 2.0, 3.0]
    out = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", [0.0, 0.02, 0.02], X)))
    assert len(out) == 2
    assert out.states[-1, 0] == 3.0
    assert out.report.duplicates_dropped == 1


def test_clean_drops_nan_row(tmp_path):
    X = np.zeros((10, 12))
    X[4, 2] = np.nan
    out = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", np.arange(10) * 0.02, X)))
    assert len(out) == 9
    assert out.report.nans_dropped == 1


def test_clean_sorts(tmp_path):
    out = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", [0.04, 0.0, 0.02])))
    assert out.t.tolist() == [0.0, 0.02, 0.04]


def test_clean_all_nan_is_empty(tmp_path):
    X = np.full((2, 12), np.nan)
    with pytest.raises(EmptyLogError):
        ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", [0.0, 0.02], X)))


def test_resample_uniform_unchanged(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 12)) * 0.1
    U = rng.uniform(-1, 1, size=(20, 2))
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", np.arange(20) * 0.02, X, U)))
    ds = ingest.resample(log, 50.0)
    assert ds.dt == pytest.approx(0.02)
    assert len(ds.segments) == 1
    np.testing.assert_array_equal(ds.segments[0].states, X)
    np.testing.assert_array_equal(ds.segments[0].inputs, U)


def test_resample_zero_order_hold_100_to_50(tmp_path):
    t = np.arange(41) * 0.01
    X = np.zeros((41, 12))
    X[:, 0] = np.arange(41)
    ds = ingest.resample(ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", t, X))), 50.0)
    np.testing.assert_array_equal(ds.segments[0].states[:, 0], np.arange(0, 41, 2))


def test_resample_zoh_holds_latest_row(tmp_path):
    # raw samples at 0, 0.015, 0.05: tick 0.02 and 0.04 must hold the 0.015 row
    X = np.zeros((3, 12))
    X[:, 0] = [1.0, 2.0, 3.0]
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", [0.0, 0.015, 0.05], X)))
    ds = ingest.resample(log, 50.0)
    assert ds.segments[0].states[:, 0].tolist() == [1.0, 2.0, 2.0]


def test_resample_gap_splits(tmp_path):
    t = np.concatenate([np.arange(10) * 0.02, 1.18 + np.arange(10) * 0.02])
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", t)))
    ds = ingest.resample(log, 50.0, gap_periods=5.0)  # 0.1 s threshold
    assert ds.lengths == [10, 10]


def test_resample_segment_column_and_cuts(tmp_path):
    t = np.arange(20) * 0.02
    seg = np.repeat([0, 1], 10)
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", t, extra_cols={"segment": seg})))
    assert ingest.resample(log, 50.0).lengths == [10, 10]
    log2 = ingest.clean(ingest.load_log(write_log(tmp_path / "b.csv", t)))
    assert ingest.resample(log2, 50.0, cuts=[0.1]).lengths == [5, 15]


def test_resample_rejects_out_of_range_input(tmp_path):
    U = np.zeros((5, 2))
    U[3, 1] = 1.5
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", np.arange(5) * 0.02, inputs=U)))
    with pytest.raises(DataError, match="line 5"):
        ingest.resample(log, 50.0)


def test_resample_bad_rate(tmp_path):
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", [0.0, 0.02])))
    with pytest.raises(InvalidInputError):
        ingest.resample(log, 0.0)


def test_resample_wraps_attitude(tmp_path):
    X = np.zeros((3, 12))
    X[:, 5] = 3 * np.pi
    log = ingest.clean(ingest.load_log(write_log(tmp_path / "a.csv", [0.0, 0.02, 0.04], X)))
    assert np.allclose(ingest.resample(log, 50.0).segments[0].states[:, 5], np.pi)


def test_split_80_20():
    ds = random_dataset(lengths=(100,))
    tr, te = ingest.split_chronological(ds, 0.8)
    assert (tr.n_samples, te.n_samples) == (80, 20)
    np.testing.assert_array_equal(te.segments[0].states, ds.segments[0].states[80:])


def test_split_two_equal_segments():
    ds = random_dataset(lengths=(30, 30))
    tr, te = ingest.split_chronological(ds, 0.5)
    assert tr.lengths == [30] and te.lengths == [30]
    np.testing.assert_array_equal(te.segments[0].states, ds.segments[1].states)


@pytest.mark.parametrize("frac", [1.2, 0.0, 1.0, -0.1])
def test_split_bad_fraction(frac):
    with pytest.raises(InvalidInputError):
        ingest.split_chronological(random_dataset(), frac)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=1, max_size=5), st.floats(0.05, 0.95))
def test_split_partitions_samples(lengths, frac):
    ds = random_dataset(lengths=tuple(lengths))
    tr, te = ingest.split_chronological(ds, frac)
    assert tr.n_samples + te.n_samples == ds.n_samples
    assert tr.n_samples == int(np.floor(frac * ds.n_samples))
    both = np.concatenate([tr.states(), te.states()])
    np.testing.assert_array_equal(both, ds.states())


def test_snapshot_pairs_never_cross_segments():
    ds = random_dataset(lengths=(5, 7))
    X, U, Y = ds.snapshot_pairs()
    assert X.shape[0] == 4 + 6
    np.testing.assert_array_equal(Y[3], ds.segments[0].states[4])
    np.testing.assert_array_equal(X[4], ds.segments[1].states[0])


def test_windows_and_locate():
    ds = random_dataset(lengths=(5, 3))
    assert ds.windows(2) == [(0, 0), (0, 1), (0, 2), (1, 0)]
    assert ds.locate(6) == (1, 1)
    with pytest.raises(InvalidInputError):
        ds.locate(8)


def test_csv_round_trip(tmp_path):
    ds = random_dataset(lengths=(20, 15))
    ds.to_csv(tmp_path / "d.csv", provenance={"seed": 1})
    back = ingest.Dataset.from_csv(tmp_path / "d.csv")
    assert back.lengths == ds.lengths
    assert back.dt == pytest.approx(ds.dt)
    for a, b in zip(ds.segments, back.segments):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.inputs, b.inputs)


def test_derive_twists_constant_velocity():
    dt = 0.02
    L = 30
    X = np.zeros((L, 12))
    X[:, 5] = 0.5
    vel = np.array([0.3, -0.1, 0.2])
    X[:, 0:3] = np.arange(L)[:, None] * dt * vel
    X[:, 3] = np.arange(L) * dt * 0.1
    seg = ingest.Segment(np.arange(L) * dt, X, np.zeros((L, 1)))
    out = ingest.derive_twists(seg, dt)
    R = core.euler_to_rotation(X[:, 3:6])
    body = np.einsum("kji,j->ki", R, vel)
    np.testing.assert_allclose(out.states[:, 6:9], body, atol=1e-12)
    np.testing.assert_allclose(out.states[:, 9], 0.1, atol=1e-12)


def test_derive_twists_wraps_seam():
    dt = 0.02
    X = np.zeros((3, 12))
    X[:, 5] = [np.pi - 0.01, -np.pi + 0.01, -np.pi + 0.03]
    out = ingest.derive_twists(ingest.Segment(np.arange(3) * dt, X, np.zeros((3, 1))), dt)
    np.testing.assert_allclose(out.states[:, 11], [1.0, 1.0, 1.0], atol=1e-9)


def test_normalizer_constant_input_is_degenerate():
    rng = np.random.default_rng(0)
    real, sim = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    u = rng.normal(size=(50, 3))
    u[:, 1] = 0.25
    with pytest.raises(DegenerateFeatureError) as info:
        ingest.Normalizer.fit(real, sim, u)
    assert info.value.feature == "input u2"


def test_normalizer_zscores_own_residuals():
    rng = np.random.default_rng(1)
    real = rng.normal(size=(200, 6)) * 3 + 1
    sim = real + rng.normal(size=(200, 6)) * 0.1 + 0.5
    u = rng.uniform(-1, 1, size=(200, 4))
    norm = ingest.Normalizer.fit(real, sim, u)
    z = norm.normalize_delta(real - sim)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(norm.denormalize_delta(z), real - sim, atol=1e-12)


def test_normalizer_duplicate_data_same_stats():
    rng = np.random.default_rng(2)
    real, sim, u = rng.normal(size=(60, 6)), rng.normal(size=(60, 6)), rng.normal(size=(60, 2))
    a = ingest.Normalizer.fit(real, sim, u)
    b = ingest.Normalizer.fit(np.vstack([real, real]), np.vstack([sim, sim]), np.vstack([u, u]))
    for k, v in a.to_arrays().items():
        np.testing.assert_allclose(b.to_arrays()[k], v, rtol=1e-12, atol=1e-15)


def test_fit_normalizer_on_dataset():
    ds = random_dataset(lengths=(40, 30))
    sim = ds.states()[:, core.TWIST] * 0.9
    norm = ingest.fit_normalizer(ds, sim)
    assert norm.twist_mean.shape == (6,)
    with pytest.raises(InvalidInputError):
        ingest.fit_normalizer(ds, sim[:10])
