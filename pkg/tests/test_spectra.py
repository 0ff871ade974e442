import numpy as np
import pytest
from scipy import integrate

from tylermp.estimators import tyler_estimate
from tylermp.sampling import SeedSpec, sample_gaussian
from tylermp.spectra import (
    EmpiricalCDF,
    MPLaw,
    Spectrum,
    dump_spectrum,
    eigenvalues_sym,
    histogram,
    ks_distance,
    mp_cdf,
    mp_density,
    mp_support,
    operator_norm,
    operator_norm_diff,
)

Y_SWEEP = [0.05, 0.2, 0.5, 0.9]


def random_sym(p, rng):
    A = rng.standard_normal((p, p))
    return A + A.T


def test_eigenvalues_trivial():
    np.testing.assert_array_equal(eigenvalues_sym(np.diag([3.0, 1.0, 2.0])).eigenvalues, [1, 2, 3])
    np.testing.assert_array_equal(eigenvalues_sym(np.eye(5)).eigenvalues, np.ones(5))


def test_eigenvalues_trace_and_reconstruction(rng):
    M = random_sym(50, rng)
    ev = eigenvalues_sym(M).eigenvalues
    assert abs(ev.sum() - np.trace(M)) < 1e-8
    assert np.all(np.diff(ev) >= 0)
    lam, V = np.linalg.eigh(M)
    np.testing.assert_allclose(lam, ev, atol=1e-12)
    assert np.abs(M @ V - V * lam).max() < 1e-8 * np.linalg.norm(M, 2)


def test_eigenvalues_reject_asymmetric():
    with pytest.raises(ValueError):
        eigenvalues_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_tyler_spectrum_positive_unit_sum():
    X = sample_gaussian(200, 30, SeedSpec(1))
    ev = eigenvalues_sym(tyler_estimate(X).matrix).eigenvalues
    assert ev.min() > 0 and ev.sum() == pytest.approx(1.0, abs=1e-12)


def test_operator_norm_diff_trivial():
    A = np.diag([2.0, 1.0])
    assert operator_norm_diff(A, A) == 0.0
    assert operator_norm_diff(A, np.eye(2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        operator_norm_diff(np.eye(2), np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_operator_norm_diff_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    A, B = random_sym(100, rng), random_sym(100, rng)
    dense = np.abs(eigenvalues_sym(A - B).eigenvalues).max()
    assert abs(operator_norm_diff(A, B) - dense) <= 1e-8 * dense


def test_operator_norm_degenerate_top(rng):
    # equal-magnitude extreme eigenvalues of opposite sign
    Q, _ = np.linalg.qr(rng.standard_normal((60, 60)))
    d = np.linspace(-1, 1, 60)
    d[0], d[-1] = -5.0, 5.0
    assert operator_norm((Q * d) @ Q.T) == pytest.approx(5.0, rel=1e-10)


def test_operator_norm_metric(rng):
    for _ in range(5):
        A, B, C = (random_sym(30, rng) for _ in range(3))
        assert operator_norm_diff(A, B) == pytest.approx(operator_norm_diff(B, A), rel=1e-10)
        assert operator_norm_diff(A, C) <= operator_norm_diff(A, B) + operator_norm_diff(B, C) + 1e-10


def test_mp_support():
    assert mp_support(0) == (1, 1)
    assert mp_support(1) == (0, 4)
    lo, hi = mp_support(0.2)
    assert lo == pytest.approx(0.3055728090000841)
    assert hi == pytest.approx(2.094427190999916)
    with pytest.raises(ValueError):
        mp_support(1.5)


@pytest.mark.parametrize("y", Y_SWEEP)
def test_mp_density_mass_and_edges(y):
    lo, hi = mp_support(y)
    mass, _ = integrate.quad(lambda x: mp_density(y, x), lo, hi, limit=200, epsabs=1e-12)
    assert abs(mass - 1) < 1e-6
    assert mp_density(y, lo) == 0.0 and mp_density(y, hi) == 0.0
    assert mp_density(y, hi + 1) == 0.0 and mp_density(y, lo / 2) == 0.0
    assert np.all(mp_density(y, np.linspace(lo, hi, 101)) >= 0)


def test_mp_density_bad_y():
    for y in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            mp_density(y, 1.0)


@pytest.mark.parametrize("y", [0.2, 0.5])
def test_mp_cdf_matches_direct_quadrature(y):
    lo, hi = mp_support(y)
    law = MPLaw(y)
    for x in np.linspace(lo, hi, 9)[1:-1]:
        ref, _ = integrate.quad(lambda t: mp_density(y, t), lo, x, epsabs=1e-12, limit=200)
        assert law.cdf(x) == pytest.approx(ref, abs=1e-8)
    assert law.cdf(lo - 1) == 0.0 and law.cdf(hi + 1) == 1.0
    assert mp_cdf(y, np.array([lo, hi])).tolist() == [0.0, 1.0]


def test_ecdf_steps():
    F = EmpiricalCDF.from_samples([2.0, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(F([0.5, 1.0, 1.5, 2.0, 3.0]), [0, 0.25, 0.25, 0.75, 1.0])
    np.testing.assert_allclose(F.left_values, [0, 0.25, 0.75])
    assert Spectrum([3.0, 1.0]).eigenvalues.tolist() == [1.0, 3.0]


def test_ks_trivial():
    samples = np.array([0.3, 1.2, 1.2, 4.0])
    F = EmpiricalCDF.from_samples(samples)
    assert ks_distance(F, F) == 0.0
    # one point at the median of the uniform law on [0, 1]
    assert ks_distance([0.5], lambda x: np.clip(x, 0, 1)) == pytest.approx(0.5)


def _independent_mp_quantiles(y, probs):
    # inverse of a cumulative trapezoid on a fine edge-clustered grid
    lo, hi = mp_support(y)
    x = lo + (hi - lo) * (1 - np.cos(np.linspace(0, np.pi, 200001))) / 2
    f = mp_density(y, x)
    cum = np.concatenate([[0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
    return np.interp(probs, cum / cum[-1], x)


def test_ks_inverse_cdf_sample_against_mp():
    p = 400
    stratified = _independent_mp_quantiles(0.2, (np.arange(p) + 0.5) / p)
    assert ks_distance(stratified, MPLaw(0.2)) < 0.05
    assert ks_distance(stratified, MPLaw(0.2)) < 1 / p
    random = _independent_mp_quantiles(0.2, np.random.default_rng(3).uniform(size=p))
    assert ks_distance(random, MPLaw(0.2)) < 0.05


def test_ks_stable_under_small_perturbation(rng):
    X = sample_gaussian(2000, 400, SeedSpec(14))
    S = X.T @ X / 2000
    E = random_sym(400, rng)
    E *= 1e-3 / np.linalg.norm(E, 2)
    law = MPLaw(0.2)
    k0 = ks_distance(np.linalg.eigvalsh(S), law)
    k1 = ks_distance(np.linalg.eigvalsh(S + E), law)
    assert abs(k1 - k0) <= 1e-2


def test_histogram_and_dump(tmp_path):
    H = histogram(np.arange(10.0), bins=5)
    assert H.shape == (5, 3) and H[:, 2].sum() == 10
    assert H[0, 0] == 0 and H[-1, 1] == 9
    assert histogram(np.arange(10.0)).shape == (100, 3)
    path = tmp_path / "ev.txt"
    dump_spectrum(Spectrum([1 / 3, 2.0]), path)
    assert np.array_equal(np.loadtxt(path), [1 / 3, 2.0])
