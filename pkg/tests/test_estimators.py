import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning

from tylermp._validation import ExistenceError, NotPositiveDefiniteError
from tylermp.estimators import (
    CovarianceEstimate,
    MaronnaMEstimator,
    SolverConfig,
    TylerMEstimator,
    maronna_estimate,
    maronna_weight_residual,
    quadratic_forms,
    sample_covariance,
    tyler_estimate,
    tyler_objective,
    tyler_weights,
)
from tylermp.sampling import SeedSpec, sample_gaussian
from tylermp.spectra import operator_norm_diff
from tylermp.weights import constant_weight, power_weight, rational_weight


def rel_diff(A, B):
    return operator_norm_diff(A, B) / np.linalg.norm(B, 2)


def well_conditioned(p, rng):
    Q1, _ = np.linalg.qr(rng.standard_normal((p, p)))
    Q2, _ = np.linalg.qr(rng.standard_normal((p, p)))
    return (Q1 * rng.uniform(0.5, 2.0, p)) @ Q2


# -- sample covariance -------------------------------------------------------

def test_sample_covariance_basis():
    np.testing.assert_array_equal(sample_covariance(np.eye(3)).matrix, np.eye(3) / 3)
    np.testing.assert_array_equal(sample_covariance([[1.0, 1.0]]).matrix, np.ones((2, 2)))


def test_sample_covariance_rejects_nan():
    with pytest.raises(ValueError):
        sample_covariance([[1.0, np.nan]])


def test_sample_covariance_top_eigenvalue():
    X = sample_gaussian(4000, 800, SeedSpec(3))
    lam = np.linalg.eigvalsh(sample_covariance(X).matrix)[-1]
    assert abs(lam - (1 + np.sqrt(0.2)) ** 2) < 0.15


# -- Tyler --------------------------------------------------------------------

def test_tyler_scalar():
    est = tyler_estimate([[2.0], [-3.0], [0.5]])
    np.testing.assert_allclose(est.matrix, [[1.0]])


def test_tyler_scaled_basis():
    X = np.diag([1.0, 5.0, 0.1, 2.0])
    est = tyler_estimate(X)
    np.testing.assert_allclose(est.matrix, np.eye(4) / 4, atol=1e-12)
    inv = 1 / np.diag(X) ** 2
    np.testing.assert_allclose(est.weights, inv / inv.sum())


def test_tyler_gaussian_converges(gaussian_500_100):
    est = tyler_estimate(gaussian_500_100)
    assert est.converged
    assert est.residual < 1e-10
    assert est.trace == pytest.approx(1.0, abs=1e-12)
    # the reported residual is the defect of the returned matrix
    X = gaussian_500_100
    q = quadratic_forms(X, est.matrix)
    F = (100 / 500) * (X.T / q) @ X
    assert np.linalg.norm(F - est.matrix, 2) / np.linalg.norm(est.matrix, 2) < 1e-10


def test_tyler_init_independent(gaussian_500_100, rng):
    A = rng.standard_normal((100, 100))
    init = A @ A.T + 100 * np.eye(100)
    a = tyler_estimate(gaussian_500_100).matrix
    b = tyler_estimate(gaussian_500_100, init=init).matrix
    assert rel_diff(a, b) < 1e-8


def test_tyler_existence_errors():
    with pytest.raises(ExistenceError):
        tyler_estimate(np.ones((5, 3)))
    with pytest.raises(ExistenceError):
        tyler_estimate(np.ones((2, 3)))
    with pytest.raises(ValueError):
        tyler_estimate(np.vstack([np.eye(3), np.zeros((1, 3))]))


def test_tyler_nonconvergence_warns(gaussian_500_100):
    with pytest.warns(ConvergenceWarning):
        est = tyler_estimate(gaussian_500_100, SolverConfig(max_iter=2))
    assert not est.converged and est.residual > 1e-10


@given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 5), extra=st.integers(3, 25))
@settings(max_examples=25, deadline=None)
def test_tyler_row_scaling_invariance(seed, p, extra):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((p + extra, p))
    c = np.exp(rng.uniform(-3, 3, p + extra))
    a = tyler_estimate(X).matrix
    b = tyler_estimate(X * c[:, None]).matrix
    assert rel_diff(b, a) < 1e-8


@given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 5), extra=st.integers(3, 25))
@settings(max_examples=25, deadline=None)
def test_tyler_affine_equivariance(seed, p, extra):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((p + extra, p))
    T = well_conditioned(p, rng)
    S = tyler_estimate(X).matrix
    ST = tyler_estimate(X @ T.T).matrix
    expected = T @ S @ T.T
    expected /= np.trace(expected)
    assert rel_diff(ST, expected) < 1e-8


def test_tyler_weights_minimise_objective_oracle():
    # minimise the weight objective directly over log-weights
    rng = np.random.default_rng(5)
    n, p = 40, 5
    X = rng.standard_normal((n, p)) * np.exp(rng.normal(size=(n, 1)))
    est = tyler_estimate(X, SolverConfig(tol=1e-13))

    def f(v):
        return tyler_objective(np.exp(v), X)

    res = minimize(f, np.zeros(n), method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
    w = np.exp(res.x)
    w /= w.sum()
    np.testing.assert_allclose(est.weights, w, rtol=1e-4)
    np.testing.assert_allclose(tyler_weights(X, est.matrix), est.weights, rtol=1e-10)
    assert f(np.log(est.weights)) <= res.fun + 1e-9


def test_tyler_weights_reproduce_estimate(gaussian_500_100):
    est = tyler_estimate(gaussian_500_100)
    w = tyler_weights(gaussian_500_100, est.matrix)
    S = (gaussian_500_100.T * w) @ gaussian_500_100
    assert rel_diff(S / np.trace(S), est.matrix) < 1e-9
    assert w.sum() == pytest.approx(1.0)


def test_tyler_weights_equal_norm_orthogonal():
    X = 3.0 * np.eye(6)
    w = tyler_weights(X, tyler_estimate(X).matrix)
    np.testing.assert_allclose(w, 1 / 6)


def test_tyler_weights_concentration_pilot_bound(gaussian_2000_400):
    # 0.25 is not reachable at this size: the extreme chi-square norms put
    # max |n w - 1| near 1/0.75 - 1. The bound here comes from a pilot run.
    w = tyler_estimate(gaussian_2000_400).weights
    dev = np.abs(2000 * w - 1).max()
    assert dev < 0.55
    # tracks p / |x|^2 closely
    r = 400 / np.einsum("ij,ij->i", gaussian_2000_400, gaussian_2000_400)
    assert np.corrcoef(w, r)[0, 1] > 0.8


def test_tyler_weights_not_pd():
    with pytest.raises(NotPositiveDefiniteError):
        tyler_weights(np.eye(2), np.diag([1.0, -1.0]))


def test_objective_scale_invariant_and_minimal(gaussian_500_100):
    X = gaussian_500_100[:, :20]
    w = tyler_estimate(X).weights
    f = tyler_objective(w, X)
    assert tyler_objective(7.5 * w, X) == pytest.approx(f, rel=1e-12, abs=1e-9)
    assert f <= tyler_objective(np.full(500, 1 / 500), X)


def test_objective_uniform_optimal_for_orthonormal_rows(rng):
    # with n = p orthonormal rows det(sum w x x^T) = prod w, so the objective
    # is flat and the uniform weights are a minimiser
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    f0 = tyler_objective(np.ones(6), Q)
    assert abs(f0) < 1e-12
    for _ in range(10):
        assert tyler_objective(np.exp(0.1 * rng.standard_normal(6)), Q) >= f0 - 1e-12
    # two copies of the basis: uniform strictly beats unbalanced pairs
    X = np.vstack([Q, Q])
    f1 = tyler_objective(np.ones(12), X)
    w = np.ones(12)
    w[0], w[6] = 2.0, 0.5
    assert tyler_objective(w, X) > f1 + 0.1


def test_objective_errors():
    X = np.array([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(NotPositiveDefiniteError):
        tyler_objective(np.ones(2), X)
    with pytest.raises(ValueError):
        tyler_objective(np.array([1.0, -1.0]), np.eye(2))
    with pytest.raises(ValueError):
        tyler_objective(np.ones(3), np.eye(2))


# -- Maronna -------------------------------------------------------------------

def test_maronna_constant_is_gram(gaussian_500_100):
    X = gaussian_500_100
    est = maronna_estimate(X, constant_weight())
    np.testing.assert_allclose(est.matrix, X.T @ X, rtol=1e-12)
    assert est.iterations == 1


@pytest.mark.parametrize("weight", [rational_weight(2.0), power_weight(-0.5)], ids=str)
def test_maronna_converges(weight):
    X = sample_gaussian(500, 50, SeedSpec(21))
    est = maronna_estimate(X, weight)
    assert est.converged and est.residual < 1e-9
    assert maronna_weight_residual(X, est.matrix, weight) < 1e-6


def test_maronna_weight_residual():
    X = sample_gaussian(200, 10, SeedSpec(2))
    assert maronna_weight_residual(X, X.T @ X, constant_weight()) < 1e-12
    S = maronna_estimate(X, rational_weight(2.0)).matrix
    assert maronna_weight_residual(X, 1.1 * S, rational_weight(2.0)) > 1e-3


def test_maronna_affine_equivariance(rng):
    X = sample_gaussian(300, 8, SeedSpec(4))
    T = well_conditioned(8, rng)
    a = maronna_estimate(X, "rational:2").matrix
    b = maronna_estimate(X @ T.T, "rational:2").matrix
    assert rel_diff(b, T @ a @ T.T) < 1e-6


def test_maronna_init_independent(rng):
    X = sample_gaussian(500, 100, SeedSpec(31))
    a = maronna_estimate(X, "power:-0.5").matrix
    b = maronna_estimate(X, "power:-0.5", init=50 * np.eye(100)).matrix
    assert rel_diff(a, b) < 1e-8


def test_maronna_rejects_invalid_weight():
    X = sample_gaussian(100, 5, SeedSpec(1))
    from tylermp.weights import WeightFn

    with pytest.raises(ValueError):
        maronna_estimate(X, WeightFn("x", lambda x: x))


def test_maronna_existence():
    with pytest.raises(ExistenceError):
        maronna_estimate(np.ones((10, 3)), "one")
    # psi increases to 0.5 < p/n, so the equation cannot balance
    from tylermp.weights import WeightFn

    X = sample_gaussian(10, 9, SeedSpec(1))
    with pytest.raises(ExistenceError):
        maronna_estimate(X, WeightFn("capped", lambda x: 0.5 / (1 + x)))


# -- records and sklearn wrappers ------------------------------------------------

def test_estimate_json_round_trip(gaussian_500_100):
    est = tyler_estimate(gaussian_500_100[:, :10])
    d = json.loads(est.to_json())
    assert set(d) >= {"matrix", "trace", "iterations", "residual", "converged", "weight_vector"}
    back = CovarianceEstimate.from_dict(d)
    np.testing.assert_array_equal(back.matrix, est.matrix)
    np.testing.assert_array_equal(back.weights, est.weights)
    assert back.iterations == est.iterations and back.kind == "tyler"


def test_sklearn_tyler(gaussian_500_100):
    X = gaussian_500_100[:, :20]
    est = TylerMEstimator(normalization="dimension").fit(X)
    ref = tyler_estimate(X)
    np.testing.assert_allclose(est.covariance_, 20 * ref.matrix)
    np.testing.assert_allclose(est.precision_ @ est.covariance_, np.eye(20), atol=1e-10)
    assert est.n_features_in_ == 20 and est.converged_
    assert est.mahalanobis(X).shape == (500,)
    assert est.spectrum().shape == (20,)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert not hasattr(c, "covariance_")
    with pytest.raises(ValueError):
        TylerMEstimator(normalization="bogus").fit(X)


def test_sklearn_maronna_scaling(gaussian_500_100):
    X = gaussian_500_100
    est = MaronnaMEstimator(weight="one").fit(X)
    np.testing.assert_allclose(est.covariance_, X.T @ X / 500, rtol=1e-12)
    raw = MaronnaMEstimator(weight="power:-0.5", scaling=None).fit(X)
    assert raw.scale_ == 1.0
    np.testing.assert_allclose(raw.covariance_, raw.raw_covariance_)
    est.set_params(weight="rational:2")
    assert est.get_params()["weight"] == "rational:2"


def test_sklearn_rejects_bad_input():
    with pytest.raises(ValueError):
        TylerMEstimator().fit(np.array([[np.inf, 1.0], [1.0, 2.0]]))
    with pytest.raises(ValueError):
        TylerMEstimator().fit(np.arange(3.0))
