"""Sample covariance, Tyler's and Maronna's scatter M-estimators.

The functional core (``tyler_estimate``, ``maronna_estimate`` ...) works on
plain arrays and returns :class:`CovarianceEstimate` records. The
scikit-learn style :class:`TylerMEstimator` and :class:`MaronnaMEstimator`
wrap it so the estimators plug into pipelines, ``clone`` and ``get_params``.

Both solvers are fixed-point iterations on the defining equations. Quadratic
forms ``x_i^T S^{-1} x_i`` come from one Cholesky factorisation per step and a
triangular solve; no explicit inverse is formed.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.covariance import EmpiricalCovariance
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted, validate_data

from ._validation import (
    ExistenceError,
    NotPositiveDefiniteError,
    check_data,
    check_no_zero_rows,
    check_spans,
    check_symmetric,
    spd_cholesky,
)
from .spectra import _block_power_norm
from .weights import PsiRangeError, WeightFn, maronna_scaling, parse_weight, psi_inverse, validate_u

__all__ = [
    "SolverConfig",
    "CovarianceEstimate",
    "quadratic_forms",
    "sample_covariance",
    "tyler_estimate",
    "tyler_weights",
    "tyler_objective",
    "maronna_estimate",
    "maronna_weight_residual",
    "TylerMEstimator",
    "MaronnaMEstimator",
]


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule for the fixed-point solvers.

    ``tol`` bounds the relative operator-norm residual of the defining
    equation. ``damping`` in (0, 1] mixes the new iterate with the old one.
    ``power_steps`` is the number of block power iterations used to estimate
    the residual inside the loop; the final residual is always computed with
    a dense eigensolve.
    """

    tol: float = 1e-10
    max_iter: int = 1000
    damping: float = 1.0
    power_steps: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    weights: np.ndarray = None
    kind: str = "sample"
    extra: dict = field(default_factory=dict)

    @property
    def trace(self):
        return float(np.trace(self.matrix))

    @property
    def p(self):
        return self.matrix.shape[0]

    def to_dict(self):
        return {
            "kind": self.kind,
            "matrix": self.matrix.tolist(),
            "trace": self.trace,
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
            "weight_vector": None if self.weights is None else self.weights.tolist(),
            **self.extra,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        w = d.pop("weight_vector", None)
        d.pop("trace", None)
        return cls(
            matrix=np.asarray(d.pop("matrix"), dtype=np.float64),
            iterations=d.pop("iterations"),
            residual=d.pop("residual"),
            converged=d.pop("converged"),
            weights=None if w is None else np.asarray(w, dtype=np.float64),
            kind=d.pop("kind", "sample"),
            extra=d,
        )


def quadratic_forms(X, Sigma):
    """``x_i^T Sigma^{-1} x_i`` for every row, via a Cholesky solve."""
    L = spd_cholesky(Sigma, name="scatter matrix")
    Z = solve_triangular(L, X.T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", Z, Z)


def _weighted_scatter(X, w):
    return (X.T * w) @ X


def _dense_norm(M):
    return float(np.abs(np.linalg.eigvalsh(M)).max())


def _rel_residual_estimate(R, Sigma, steps):
    if R.shape[0] <= 4:
        return _dense_norm(R) / _dense_norm(Sigma)
    r, _, _ = _block_power_norm(R, steps, 0.0, 4)
    s, _, _ = _block_power_norm(Sigma, steps, 0.0, 4)
    return r / s


def sample_covariance(X):
    """Uncentred sample covariance ``(1/n) sum x_i x_i^T``."""
    X = check_data(X)
    n = X.shape[0]
    S = X.T @ X / n
    return CovarianceEstimate(S, weights=np.full(n, 1.0 / n), kind="sample")


def _fixed_point(step, Sigma, cfg, renorm, kind):
    """Generic loop: ``step(Sigma) -> (F, q)`` evaluates the defining map."""
    for it in range(1, cfg.max_iter + 1):
        F, q = step(Sigma)
        R = F - Sigma
        rel = _rel_residual_estimate(R, Sigma, cfg.power_steps)
        if rel <= cfg.tol:
            exact = _dense_norm(R) / _dense_norm(Sigma)
            if exact <= cfg.tol:
                return Sigma, it, exact, True, q
        new = F if cfg.damping == 1.0 else (1 - cfg.damping) * Sigma + cfg.damping * F
        new = 0.5 * (new + new.T)
        Sigma = renorm(new)
    F, q = step(Sigma)
    exact = _dense_norm(F - Sigma) / _dense_norm(Sigma)
    converged = exact <= cfg.tol
    if not converged:
        warnings.warn(
            f"{kind} fixed point did not converge in {cfg.max_iter} iterations "
            f"(relative residual {exact:.3g} > tol {cfg.tol:.3g})",
            ConvergenceWarning,
            stacklevel=3,
        )
    return Sigma, cfg.max_iter + 1, exact, converged, q


def _check_init(init, p):
    init = check_symmetric(init, rtol=1e-8, name="initial scatter")
    if init.shape != (p, p):
        raise ValueError(f"initial scatter has shape {init.shape}, expected {(p, p)}")
    spd_cholesky(init, name="initial scatter")
    return 0.5 * (init + init.T)


def tyler_estimate(X, cfg=None, init=None):
    """Tyler's M-estimator.

    Solves ``Sigma = (p/n) sum x_i x_i^T / (x_i^T Sigma^{-1} x_i)`` with
    ``tr(Sigma) = 1`` by fixed-point iteration from ``I/p`` (or ``init``),
    renormalising the trace after every step.

    Parameters
    ----------
    X : array-like of shape (n, p)
        Samples as rows. Rows must be nonzero and span R^p.
    cfg : SolverConfig, optional
    init : array-like of shape (p, p), optional
        Positive definite starting point.

    Returns
    -------
    CovarianceEstimate
        ``weights`` holds the normalised weights ``w_i`` with
        ``Sigma = sum w_i x_i x_i^T / tr(sum w_i x_i x_i^T)``.

    Raises
    ------
    ExistenceError
        If ``n < p`` or the rows do not span R^p.
    """
    cfg = cfg or SolverConfig()
    X = check_data(X)
    n, p = X.shape
    check_no_zero_rows(X)
    check_spans(X)

    def renorm(S):
        return S / np.trace(S)

    def step(S):
        q = quadratic_forms(X, S)
        return (p / n) * _weighted_scatter(X, 1.0 / q), q

    Sigma0 = np.eye(p) / p if init is None else renorm(_check_init(init, p))
    Sigma, it, res, ok, q = _fixed_point(step, Sigma0, cfg, renorm, "Tyler")
    Sigma = renorm(Sigma)
    w = (1.0 / q) / np.sum(1.0 / q)
    return CovarianceEstimate(Sigma, it, res, ok, w, kind="tyler")


def tyler_weights(X, Sigma):
    """Normalised weights ``w_i proportional to 1 / (x_i^T Sigma^{-1} x_i)``.

    For Tyler's estimate these weights reproduce it as the trace-normalised
    weighted scatter ``sum w_i x_i x_i^T``.
    """
    X = check_data(X)
    Sigma = check_symmetric(Sigma, rtol=1e-8, name="scatter matrix")
    inv_q = 1.0 / quadratic_forms(X, Sigma)
    return inv_q / inv_q.sum()


def tyler_objective(w, X):
    """``-sum log w_i + (n/p) log det(sum w_i x_i x_i^T)``.

    Invariant to rescaling ``w``; minimised over the simplex by the Tyler
    weights.
    """
    X = check_data(X)
    n, p = X.shape
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    sign, logdet = np.linalg.slogdet(_weighted_scatter(X, w))
    if sign <= 0 or not np.isfinite(logdet):
        raise NotPositiveDefiniteError("weighted scatter matrix is singular")
    return float(-np.sum(np.log(w)) + (n / p) * logdet)


def _resolve_weight(weight):
    if isinstance(weight, WeightFn):
        return weight
    if isinstance(weight, str):
        return parse_weight(weight)
    raise TypeError(f"weight must be a WeightFn or a spec string, got {weight!r}")


def maronna_estimate(X, weight, cfg=None, init=None, check_weight=True):
    """Maronna's M-estimator ``Sigma = sum u(x_i^T Sigma^{-1} x_i) x_i x_i^T``.

    Note there is no ``1/n`` factor. The default starting point is
    ``u(psi^{-1}(p/n)) X^T X``, the large-(n, p) limit of the solution.

    Parameters
    ----------
    X : array-like of shape (n, p)
    weight : WeightFn or str
        Weight function ``u``; strings as accepted by ``parse_weight``.
    cfg : SolverConfig, optional
    init : array-like of shape (p, p), optional
    check_weight : bool, default True
        Validate positivity and assumptions A1/A2 of ``u`` at ``y = p/n``
        first.

    Returns
    -------
    CovarianceEstimate
        ``weights`` holds ``x_i^T Sigma^{-1} x_i`` at the solution.
    """
    cfg = cfg or SolverConfig()
    weight = _resolve_weight(weight)
    X = check_data(X)
    n, p = X.shape
    check_no_zero_rows(X)
    check_spans(X)
    y = p / n
    if check_weight:
        report = validate_u(weight, y)
        if not report.ok:
            if not report.a1_limit:
                raise ExistenceError(
                    f"n * lim psi must exceed p for {weight.name}: " + "; ".join(report.failures)
                )
            raise ValueError(f"weight {weight.name} fails validation: " + "; ".join(report.failures))

    def step(S):
        q = quadratic_forms(X, S)
        return _weighted_scatter(X, weight(q)), q

    if init is None:
        gram = X.T @ X
        try:
            Sigma0 = float(weight(psi_inverse(weight, y))) * gram
        except PsiRangeError:
            Sigma0 = gram
    else:
        Sigma0 = _check_init(init, p)
    Sigma, it, res, ok, q = _fixed_point(step, Sigma0, cfg, lambda S: S, "Maronna")
    return CovarianceEstimate(Sigma, it, res, ok, q, kind="maronna", extra={"weight": weight.name})


def maronna_weight_residual(X, Sigma, weight):
    """Defect of the weight-vector form of Maronna's equation.

    With ``w_j = x_j^T Sigma^{-1} x_j`` returns
    ``max_j |w_j - x_j^T (sum_i u(w_i) x_i x_i^T)^{-1} x_j|``.
    """
    weight = _resolve_weight(weight)
    X = check_data(X)
    Sigma = check_symmetric(Sigma, rtol=1e-8, name="scatter matrix")
    w = quadratic_forms(X, Sigma)
    w2 = quadratic_forms(X, _weighted_scatter(X, weight(w)))
    return float(np.abs(w - w2).max())


class _MEstimatorBase(EmpiricalCovariance):
    # scatter M-estimators here are zero-location by construction
    assume_centered = True

    def _finish(self, est, covariance, X):
        self.estimate_ = est
        self.location_ = np.zeros(X.shape[1])
        self.n_iter_ = est.iterations
        self.residual_ = est.residual
        self.converged_ = est.converged
        self.weights_ = est.weights
        self._set_covariance(covariance)
        return self

    def spectrum(self):
        """Ascending eigenvalues of ``covariance_``."""
        check_is_fitted(self, "covariance_")
        return np.linalg.eigvalsh(self.covariance_)


class TylerMEstimator(_MEstimatorBase):
    """Tyler's M-estimator of scatter as a scikit-learn estimator.

    Parameters
    ----------
    normalization : {"trace", "dimension"}, default "trace"
        ``covariance_`` is the trace-one solution, or ``p`` times it (which
        lines up with the sample covariance of N(0, I) data).
    tol, max_iter, damping
        Passed to :class:`SolverConfig`.
    store_precision : bool, default True

    Attributes
    ----------
    covariance_, precision_, location_ (zeros), weights_, n_iter_,
    residual_, converged_, estimate_ (the raw CovarianceEstimate)
    """

    def __init__(
        self, *, normalization="trace", tol=1e-10, max_iter=1000, damping=1.0, store_precision=True
    ):
        self.normalization = normalization
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.store_precision = store_precision

    def fit(self, X, y=None, init=None):
        if self.normalization not in ("trace", "dimension"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=1)
        cfg = SolverConfig(tol=self.tol, max_iter=self.max_iter, damping=self.damping)
        est = tyler_estimate(X, cfg, init=init)
        cov = est.matrix * (X.shape[1] if self.normalization == "dimension" else 1.0)
        return self._finish(est, cov, X)


class MaronnaMEstimator(_MEstimatorBase):
    """Maronna's M-estimator of scatter as a scikit-learn estimator.

    Parameters
    ----------
    weight : str or WeightFn, default "power:-0.5"
    scaling : {"derived", "paper", None}, default "derived"
        How ``covariance_`` is obtained from the raw solution
        ``raw_covariance_``: multiplied by :func:`maronna_scaling` under the
        given convention, or left raw.
    tol, max_iter, damping
        Passed to :class:`SolverConfig`.
    store_precision : bool, default True
    """

    def __init__(
        self,
        *,
        weight="power:-0.5",
        scaling="derived",
        tol=1e-10,
        max_iter=1000,
        damping=1.0,
        store_precision=True,
    ):
        self.weight = weight
        self.scaling = scaling
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.store_precision = store_precision

    def fit(self, X, y=None, init=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=1)
        n, p = X.shape
        weight = _resolve_weight(self.weight)
        cfg = SolverConfig(tol=self.tol, max_iter=self.max_iter, damping=self.damping)
        est = maronna_estimate(X, weight, cfg, init=init)
        self.raw_covariance_ = est.matrix
        if self.scaling is None:
            self.scale_ = 1.0
        else:
            self.scale_ = maronna_scaling(weight, p / n, n, self.scaling)
        return self._finish(est, self.scale_ * est.matrix, X)
