"""Input validation helpers shared by the estimators and spectral tools."""

import numpy as np
from sklearn.utils.validation import check_array


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix that must be symmetric positive definite is not."""


class ExistenceError(ValueError):
    """Raised when the data cannot support a unique M-estimator."""


def check_data(X, min_samples=1):
    """Validate an ``(n, p)`` data matrix and return it as float64.

    Rejects NaN/inf entries and 1d input. ``min_samples`` is forwarded to
    sklearn's ``check_array``.
    """
    return check_array(
        X,
        dtype=np.float64,
        ensure_2d=True,
        ensure_all_finite=True,
        ensure_min_samples=min_samples,
    )


def check_symmetric(M, rtol=1e-10, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(np.abs(M).max(), np.finfo(float).tiny)
    if np.abs(M - M.T).max() > rtol * scale:
        raise ValueError(f"{name} is not symmetric within relative tolerance {rtol}")
    return M


def check_no_zero_rows(X):
    norms = np.einsum("ij,ij->i", X, X)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ValueError(f"data contains zero rows at indices {bad[:10].tolist()}")
    return norms


def check_spans(X):
    """Require that the rows of ``X`` span R^p (n >= p and full column rank)."""
    n, p = X.shape
    if n < p:
        raise ExistenceError(
            f"need n >= p for the M-estimators to exist, got n={n}, p={p}"
        )
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise ExistenceError(
            f"rows of X span a {rank}-dimensional subspace, not R^{p}; "
            "the M-estimator does not exist"
        )


def spd_cholesky(M, name="matrix"):
    """Lower Cholesky factor of an SPD matrix, with a typed error on failure."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from exc
