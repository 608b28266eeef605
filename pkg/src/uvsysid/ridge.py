"""Closed-form Tikhonov-regularised least squares."""

import numpy as np
import scipy.linalg

from .errors import IllPosedError, NumericError


def ridge_solve(G, Y, lam):
    """Return ``M = Y G^T (G G^T + lam I)^{-1}``.

    Columns of ``G`` (p, T) and ``Y`` (q, T) are samples.  The symmetric
    system is factorised with Cholesky; a pivoted LDL^T solve is the fallback
    when Cholesky fails.
    """
    G = np.asarray(G, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if G.ndim != 2 or Y.ndim != 2 or G.shape[1] != Y.shape[1]:
        raise ValueError(f"incompatible shapes G{G.shape}, Y{Y.shape}")
    if lam < 0:
        raise ValueError("ridge weight must be non-negative")
    p = G.shape[0]
    if lam == 0 and np.linalg.matrix_rank(G) < p:
        raise IllPosedError(f"regressor matrix is rank deficient ({p} rows) and lambda = 0")
    S = G @ G.T
    S[np.diag_indices(p)] += lam
    rhs = G @ Y.T
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
        Mt = scipy.linalg.cho_solve(factor, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        try:
            Mt = scipy.linalg.solve(S, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise NumericError(f"ridge system could not be solved: {exc}") from exc
    except ValueError as exc:
        raise NumericError(f"ridge system contains non-finite values: {exc}") from exc
    if not np.all(np.isfinite(Mt)):
        raise NumericError("ridge solution is not finite")
    return Mt.T


def normal_equation_residual(M, G, Y, lam):
    """Relative residual of ``M (G G^T + lam I) = Y G^T``."""
    lhs = M @ (G @ G.T + lam * np.eye(G.shape[0]))
    rhs = Y @ G.T
    return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))
