"""Compiled (numba) kernels versus their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repetitions N]

Each kernel is called once to trigger compilation, then timed; the table
reports the median wall time of both paths and the speed-up.  Results are
also checked for agreement.
"""

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from uvsysid import core, dynamics, kernels


def _median_time(fn, reps):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return float(np.median(out))


def cases():
    rng = np.random.default_rng(0)
    P = dynamics.default_params().packed()
    plim = core.pitch_limit()
    X0 = rng.normal(size=(256, 12)) * 0.1
    U = rng.uniform(-0.3, 0.3, size=(256, 100, 8))
    Kl, Ka = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    Xf, C = rng.normal(size=(5000, 12)), rng.normal(size=(500, 12))
    A = rng.normal(size=(512, 512))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    B, z0, Ul = rng.normal(size=(512, 8)), rng.normal(size=512), rng.uniform(-1, 1, size=(500, 8))
    Us = rng.uniform(-0.3, 0.3, size=(3000, 8))
    return {
        "fossen_rollout euler (256 x 100)": (
            lambda: kernels.fossen_rollout_nb(X0, U, 0.02, *P, kernels.EULER, 1e3, plim),
            lambda: kernels.fossen_rollout_np(X0, U, 0.02, P, kernels.EULER, 1e3, plim),
        ),
        "fossen_rollout rk4 (256 x 100)": (
            lambda: kernels.fossen_rollout_nb(X0, U, 0.02, *P, kernels.RK4, 1e3, plim),
            lambda: kernels.fossen_rollout_np(X0, U, 0.02, P, kernels.RK4, 1e3, plim),
        ),
        "fossen_simulate rk4 (3000 steps)": (
            lambda: kernels.fossen_simulate_nb(np.zeros(12), Us, 0.02, *P, 1e3, plim),
            lambda: kernels.fossen_simulate_np(np.zeros(12), Us, 0.02, P, 1e3, plim),
        ),
        "di_rollout (256 x 100)": (
            lambda: kernels.di_rollout_nb(X0, U, 0.02, Kl, Ka, 1e3, plim),
            lambda: kernels.di_rollout_np(X0, U, 0.02, Kl, Ka, 1e3, plim),
        ),
        "rbf_features (5000 x 500)": (
            lambda: kernels.rbf_features_nb(Xf, C, 3.0),
            lambda: kernels.rbf_features_np(Xf, C, 3.0),
        ),
        "lifted_rollout (d=512, 500 steps)": (
            lambda: kernels.lifted_rollout_nb(A, B, z0, Ul),
            lambda: kernels.lifted_rollout_np(A, B, z0, Ul),
        ),
    }


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-8, atol=1e-10) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repetitions", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<36} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8}  agree")
    with threadpool_limits(limits=1):
        for name, (fast, slow) in cases().items():
            ok = _agree(fast(), slow())
            tf = _median_time(fast, args.repetitions)
            ts = _median_time(slow, args.repetitions)
            print(f"{name:<36} {tf:>10.5f} {ts:>10.5f} {ts / tf:>8.1f}  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
