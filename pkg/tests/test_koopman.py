import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from uvsysid import container, core, koopman as kp
from uvsysid.errors import ContainerError, IllPosedError, InvalidInputError
from uvsysid.ingest import Dataset, Segment
from uvsysid.ridge import normal_equation_residual


def _blobs(seed=0, n=15):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 2)) * 0.3 + [-5.0, 0.0]
    b = rng.normal(size=(n, 2)) * 0.3 + [5.0, 1.0]
    return np.vstack([a, b])


def _brute_force_two_means(X):
    best, best_obj = None, np.inf
    for mask in itertools.product([0, 1], repeat=X.shape[0] - 1):
        lab = np.array((0,) + mask)
        if lab.all() or not lab.any():
            continue
        C = np.array([X[lab == k].mean(axis=0) for k in (0, 1)])
        obj = ((X - C[lab]) ** 2).sum()
        if obj < best_obj:
            best, best_obj = C, obj
    return best


def test_kmeans_single_cluster_is_mean():
    X = np.random.default_rng(1).normal(size=(40, 3))
    np.testing.assert_allclose(kp.kmeans(X, 1), X.mean(axis=0, keepdims=True), atol=1e-14)


def test_kmeans_blob_means_brute_force():
    # brute force over all two-way assignments of a smaller blob set
    X = _blobs(n=8)
    ref = _brute_force_two_means(X)
    got = kp.kmeans(X, 2, seed=3)
    got = got[np.argsort(got[:, 0])]
    ref = ref[np.argsort(ref[:, 0])]
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_kmeans_deterministic():
    X = np.random.default_rng(2).normal(size=(200, 4))
    assert np.array_equal(kp.kmeans(X, 7, seed=5), kp.kmeans(X, 7, seed=5))


def test_kmeans_k_too_large():
    with pytest.raises(InvalidInputError):
        kp.kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(InvalidInputError):
        kp.kmeans(np.zeros((3, 2)), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_kmeans_objective_non_increasing(seed, K):
    X = np.random.default_rng(seed).normal(size=(60, 3))
    res = kp.kmeans_fit(X, K, seed=seed)
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 * max(1.0, obj[0]))
    assert res.centers.shape == (K, 3)


def test_kmeans_handles_duplicate_points():
    X = np.vstack([np.zeros((10, 2)), np.ones((10, 2))])
    res = kp.kmeans_fit(X, 3, seed=0)
    assert np.all(np.isfinite(res.centers))


def test_lift_examples():
    c = np.zeros((2, 12))
    c[1, 0] = 1.0
    d = kp.RbfDictionary(c, 3.0)
    z = kp.lift(np.zeros(12), d)
    assert z.shape == (14,)
    assert z[12] == 1.0
    assert z[13] == pytest.approx(0.049787068367863944, rel=1e-14)
    empty = kp.RbfDictionary(np.empty((0, 12)), 3.0)
    x = np.arange(12.0)
    assert np.array_equal(kp.lift(x, empty), x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lift_features_in_unit_interval_and_decode_identity(seed):
    rng = np.random.default_rng(seed)
    d = kp.RbfDictionary(rng.normal(size=(20, 12)), 0.5)
    x = rng.normal(size=(5, 12))
    z = kp.lift(x, d)
    assert np.all((z[:, 12:] > 0) & (z[:, 12:] <= 1))
    assert np.array_equal(z[:, :12], x)


def test_dictionary_validation():
    with pytest.raises(InvalidInputError):
        kp.RbfDictionary(np.zeros((2, 12)), 0.0)
    with pytest.raises(InvalidInputError):
        kp.RbfDictionary(np.full((2, 12), np.nan), 1.0)


def _linear_dataset(seed, n=12, m=8, T=2000):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A *= 0.95 / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(n, m)) * 0.1
    U = rng.uniform(-1, 1, size=(T, m))
    X = np.zeros((T, n))
    X[0] = rng.normal(size=n) * 0.1
    for k in range(T - 1):
        X[k + 1] = A @ X[k] + B @ U[k]
    return A, B, Dataset([Segment(np.arange(T) * 0.02, X, U)], 0.02)


def test_edmdc_recovers_linear_system():
    A, B, ds = _linear_dataset(0)
    # per-step attitude changes stay below pi, so seam unwrapping is inert
    assert np.max(np.abs(np.diff(ds.states()[:, core.ATT], axis=0))) < np.pi
    model = kp.edmdc_fit(ds, K=0, lam=1e-12)
    assert np.linalg.norm(model.A - A) / np.linalg.norm(A) < 1e-8
    assert np.linalg.norm(model.B - B) / np.linalg.norm(B) < 1e-8


def test_edmdc_satisfies_normal_equations():
    ds = random_dataset(seed=1, lengths=(120, 80), m=3)
    model = kp.edmdc_fit(ds, K=15, gamma=1.0, lam=0.1)
    TX, TY, U = kp.snapshot_matrices(ds, model.dictionary)
    G = np.vstack([TX, U])
    M = np.hstack([model.A, model.B])
    assert normal_equation_residual(M, G, TY, 0.1) < 1e-8


def test_edmdc_large_lambda_shrinks():
    ds = random_dataset(seed=2, lengths=(100,), m=3)
    norms = [np.linalg.norm(np.hstack([m.A, m.B])) for m in (kp.edmdc_fit(ds, K=5, lam=lam) for lam in (1e-2, 1e2, 1e6))]
    assert norms[0] > norms[1] > norms[2]


def test_edmdc_rank_deficient_lambda_zero():
    ds = random_dataset(seed=3, lengths=(60,), m=3)
    for s in ds.segments:
        s.inputs[:, 1] = s.inputs[:, 0]
    with pytest.raises(IllPosedError):
        kp.edmdc_fit(ds, K=0, lam=0.0)


def test_defaults():
    assert (kp.DEFAULT_K, kp.DEFAULT_GAMMA, kp.DEFAULT_LAMBDA) == (500, 3.0, 0.1)


def test_lifted_dimension_at_default_k():
    d = kp.RbfDictionary(np.zeros((500, 12)), 3.0)
    assert d.d == 512


def _toy_model(d_extra=3, m=2, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(d_extra, 12))
    d = 12 + d_extra
    A = rng.normal(size=(d, d)) * 0.1 + np.eye(d) * 0.5
    B = rng.normal(size=(d, m))
    return kp.KoopmanModel(kp.RbfDictionary(centers, 2.0), A, B, 0.1, 0.02, seed=seed)


def test_step_examples():
    m = _toy_model()
    eye = kp.KoopmanModel(m.dictionary, np.eye(m.d), np.zeros((m.d, 2)), 0.1, 0.02)
    z = np.random.default_rng(0).normal(size=m.d)
    assert np.array_equal(eye.step(z, [0.3, -0.2]), z)
    B = np.zeros((m.d, 2))
    B[0, 1] = 1.0
    e = kp.KoopmanModel(m.dictionary, np.eye(m.d), B, 0.1, 0.02)
    out = e.step(np.zeros(m.d), [0.0, 1.0])
    assert out[0] == 1.0 and np.count_nonzero(out) == 1


def test_decode_ignores_tail():
    m = _toy_model()
    z = np.arange(m.d, dtype=float)
    np.testing.assert_array_equal(m.decode(z), np.arange(12.0))
    np.testing.assert_array_equal(m.C @ z, m.decode(z))
    x = np.random.default_rng(1).normal(size=12)
    np.testing.assert_array_equal(m.decode(m.lift(x)), x)


def test_rollout_matches_lifted_propagation():
    m = _toy_model()
    rng = np.random.default_rng(2)
    X0 = rng.normal(size=(4, 12)) * 0.1
    U = rng.uniform(-1, 1, size=(4, 15, 2))
    X, div = m.rollout(X0, U)
    assert not div.any()
    for w in range(4):
        z = m.lifted_rollout(m.lift(X0[w]), U[w])
        ref = z[:12].copy()
        ref[core.ATT] = core.wrap_angle(ref[core.ATT])
        np.testing.assert_allclose(X[w], ref, rtol=1e-10, atol=1e-12)
        traj = m.trajectory(X0[w], U[w])
        assert traj.shape == (16, 12)
        np.testing.assert_allclose(core.wrap_angle(traj[-1, core.ATT]), ref[core.ATT], atol=1e-10)


def test_rollout_flags_divergence():
    m = _toy_model()
    blow = kp.KoopmanModel(m.dictionary, np.eye(m.d) * 3.0, m.B, 0.1, 0.02, bound=10.0)
    X, div = blow.rollout(np.ones((2, 12)), np.zeros((2, 20, 2)))
    assert div.all()


def test_relift_variant_runs():
    m = _toy_model()
    r = kp.KoopmanModel(m.dictionary, m.A, m.B, 0.1, 0.02, relift=True)
    X, _ = r.rollout(np.zeros((1, 12)), np.zeros((1, 5, 2)))
    assert X.shape == (1, 12)


def test_container_round_trip_bit_exact(tmp_path):
    m = _toy_model()
    m.save(tmp_path / "k.json", provenance={"seed": 0})
    back = kp.KoopmanModel.load(tmp_path / "k.json")
    assert np.array_equal(back.A, m.A) and np.array_equal(back.B, m.B)
    assert np.array_equal(back.dictionary.centers, m.dictionary.centers)
    assert back.dictionary.gamma == m.dictionary.gamma
    back.save(tmp_path / "k2.json", provenance={"seed": 0})
    assert (tmp_path / "k.json").read_bytes() == (tmp_path / "k2.json").read_bytes()


def test_load_wrong_kind(tmp_path):
    container.save(tmp_path / "x.json", container.Container("di", {"K_lin": np.zeros((3, 2))}))
    with pytest.raises(ContainerError):
        kp.KoopmanModel.load(tmp_path / "x.json")


def test_snapshot_targets_unwrapped_across_seam():
    X = np.zeros((2, 12))
    X[:, 5] = [np.pi - 0.01, -np.pi + 0.01]
    ds = Dataset([Segment(np.array([0.0, 0.02]), X, np.zeros((2, 1)))], 0.02)
    d = kp.RbfDictionary(np.empty((0, 12)), 1.0)
    TX, TY, _ = kp.snapshot_matrices(ds, d)
    assert TY[5, 0] - TX[5, 0] == pytest.approx(0.02)


def test_fit_is_deterministic():
    ds = random_dataset(seed=4, lengths=(150,), m=2)
    a = kp.edmdc_fit(ds, K=10, seed=1)
    b = kp.edmdc_fit(ds, K=10, seed=1)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.dictionary.centers, b.dictionary.centers)
