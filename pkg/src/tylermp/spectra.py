"""Spectra of symmetric matrices and the Marchenko-Pastur reference law."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from ._validation import check_symmetric

__all__ = [
    "Spectrum",
    "EmpiricalCDF",
    "MPLaw",
    "eigenvalues_sym",
    "operator_norm",
    "operator_norm_diff",
    "mp_support",
    "mp_density",
    "mp_cdf",
    "ks_distance",
    "histogram",
    "dump_spectrum",
]


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        if ev.ndim != 1 or ev.size == 0:
            raise ValueError("spectrum needs a non-empty 1d array of eigenvalues")
        if np.any(np.diff(ev) < 0):
            ev = np.sort(ev)
        object.__setattr__(self, "eigenvalues", ev)

    def __len__(self):
        return self.eigenvalues.size

    @property
    def max(self):
        return float(self.eigenvalues[-1])

    def ecdf(self):
        return EmpiricalCDF.from_samples(self.eigenvalues)


@dataclass(frozen=True)
class EmpiricalCDF:
    """Right-continuous step CDF: ``values[k]`` is F at ``points[k]``."""

    points: np.ndarray
    values: np.ndarray
    size: int

    @classmethod
    def from_samples(cls, samples):
        samples = np.sort(np.asarray(samples, dtype=np.float64).ravel())
        points, counts = np.unique(samples, return_counts=True)
        return cls(points, np.cumsum(counts) / samples.size, samples.size)

    def __call__(self, x):
        idx = np.searchsorted(self.points, np.asarray(x, dtype=np.float64), side="right")
        vals = np.concatenate([[0.0], self.values])
        return vals[idx]

    @property
    def left_values(self):
        """F just below each jump point."""
        return np.concatenate([[0.0], self.values[:-1]])


def eigenvalues_sym(M, rtol=1e-10):
    """Ascending real spectrum of a symmetric matrix."""
    M = check_symmetric(M, rtol=rtol)
    return Spectrum(np.linalg.eigvalsh(0.5 * (M + M.T)))


def _block_power_norm(M, max_iter, rtol, block, rng_seed=0):
    p = M.shape[0]
    k = min(block, p)
    rng = np.random.default_rng(rng_seed)
    Q, _ = np.linalg.qr(rng.standard_normal((p, k)))
    est = 0.0
    for it in range(1, max_iter + 1):
        Z = M @ Q
        # Rayleigh-Ritz on the current block; keeps near-degenerate
        # partners of the top eigenvalue from stalling the estimate
        ritz = np.linalg.eigvalsh(0.5 * (Q.T @ Z + Z.T @ Q))
        new = float(np.abs(ritz).max())
        Q, _ = np.linalg.qr(Z)
        if new == 0.0:
            return 0.0, True, it
        if abs(new - est) <= rtol * new:
            return new, True, it
        est = new
    return est, False, max_iter


def operator_norm(M, max_iter=2000, rtol=1e-14, block=4, fallback=True):
    """Largest absolute eigenvalue of a symmetric matrix.

    Block power iteration with Rayleigh-Ritz extraction. If the estimate has
    not settled after ``max_iter`` steps and ``fallback`` is true, a dense
    eigensolve is used instead.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] == 0:
        return 0.0
    if M.shape[0] <= block:
        return float(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T))).max())
    est, ok, _ = _block_power_norm(M, max_iter, rtol, block)
    if not ok and fallback:
        return float(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T))).max())
    return est


def operator_norm_diff(A, B):
    """Operator (spectral) norm of ``A - B`` for symmetric ``A``, ``B``."""
    A = check_symmetric(A, rtol=1e-8, name="A")
    B = check_symmetric(B, rtol=1e-8, name="B")
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    D = A - B
    return operator_norm(0.5 * (D + D.T))


def mp_support(y):
    """Edges ``((1 - sqrt y)^2, (1 + sqrt y)^2)`` of the MP law."""
    y = float(y)
    if not 0 <= y <= 1:
        raise ValueError(f"y must lie in [0, 1], got {y}")
    r = np.sqrt(y)
    return (1 - r) ** 2, (1 + r) ** 2


def _check_y(y):
    y = float(y)
    if not 0 < y < 1:
        raise ValueError(f"y must lie in (0, 1), got {y}")
    return y


def mp_density(y, x):
    """Marchenko-Pastur density ``sqrt((y+ - x)(x - y-)) / (2 pi y x)``.

    Vanishes outside ``[y-, y+]`` and integrates to one.
    """
    y = _check_y(y)
    lo, hi = mp_support(y)
    x = np.asarray(x, dtype=np.float64)
    inside = (x > lo) & (x < hi)
    xs = np.where(inside, x, 1.0)
    val = np.sqrt(np.clip((hi - xs) * (xs - lo), 0, None)) / (2 * np.pi * y * xs)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


class MPLaw:
    """MP law for aspect ratio ``y``, with a quadrature-backed CDF."""

    panels = 1024

    def __init__(self, y):
        self.y = _check_y(y)
        self.lower, self.upper = mp_support(self.y)
        self._nodes, self._cum = _mp_cdf_table(self.y, self.panels)

    def pdf(self, x):
        return mp_density(self.y, x)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        flat = x.ravel()
        out = np.empty_like(flat)
        f = lambda t: mp_density(self.y, t)  # noqa: E731
        for i, xi in enumerate(flat):
            if xi <= self.lower:
                out[i] = 0.0
            elif xi >= self.upper:
                out[i] = 1.0
            else:
                k = min(int(np.searchsorted(self._nodes, xi, side="right")) - 1, self.panels - 1)
                part, _ = integrate.quad(f, self._nodes[k], xi, epsabs=1e-12)
                out[i] = min(1.0, self._cum[k] + part)
        out = out.reshape(x.shape)
        return float(out) if out.ndim == 0 else out

    __call__ = cdf


@lru_cache(maxsize=32)
def _mp_cdf_table(y, panels):
    lo, hi = mp_support(y)
    nodes = np.linspace(lo, hi, panels + 1)
    f = lambda t: mp_density(y, t)  # noqa: E731
    pieces = [
        integrate.quad(f, a, b, epsabs=1e-9 / panels, epsrel=1e-12)[0]
        for a, b in zip(nodes[:-1], nodes[1:])
    ]
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    nodes.setflags(write=False)
    cum.setflags(write=False)
    return nodes, cum


def mp_cdf(y, x):
    return MPLaw(y).cdf(x)


def ks_distance(F, G):
    """Kolmogorov-Smirnov distance between an empirical CDF and a reference.

    ``F`` is an :class:`EmpiricalCDF` (or raw samples); ``G`` a vectorised
    nondecreasing CDF. Both sides of every jump are compared, with ``G``'s
    left limit taken at the next float below the jump point, so a step
    function compared against itself gives exactly zero.
    """
    if not isinstance(F, EmpiricalCDF):
        F = EmpiricalCDF.from_samples(F)
    pts = F.points
    g_right = np.asarray(G(pts), dtype=np.float64)
    g_left = np.asarray(G(np.nextafter(pts, -np.inf)), dtype=np.float64)
    return float(
        max(np.abs(F.values - g_right).max(), np.abs(F.left_values - g_left).max())
    )


def histogram(values, bins=100, range=None):
    """Equal-width histogram rows ``(bin_left, bin_right, count)``."""
    values = np.asarray(values, dtype=np.float64)
    if range is None:
        range = (values.min(), values.max())
    counts, edges = np.histogram(values, bins=bins, range=range)
    return np.column_stack([edges[:-1], edges[1:], counts])


def dump_spectrum(spectrum, path):
    ev = spectrum.eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    np.savetxt(path, ev, fmt="%.17g")
