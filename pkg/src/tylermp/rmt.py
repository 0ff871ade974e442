"""Generalised Marchenko-Pastur law via its Stieltjes transform.

For a limiting population spectrum ``H`` (a discrete measure here) and
aspect ratio ``y``, the Stieltjes transform ``s(z)`` of the limiting
spectral law solves

    s = sum_k pi_k / (t_k (1 - y - y z s) - z).

The fixed point is found by damped Picard iteration, and densities are
recovered by Stieltjes inversion ``rho(x) = Im s(x + i eta) / pi``.
"""

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpectralMeasure",
    "StieltjesSolution",
    "StieltjesConvergenceError",
    "DensityCurve",
    "stieltjes_map",
    "stieltjes_solve",
    "stieltjes_solve_many",
    "density_from_stieltjes",
    "mp_stieltjes",
]

DAMPING = 0.5
TOL = 1e-12
MAX_ITER = 10_000


class StieltjesConvergenceError(RuntimeError):
    def __init__(self, message, z, s, residual):
        super().__init__(message)
        self.z = z
        self.s = s
        self.residual = residual


@dataclass(frozen=True)
class SpectralMeasure:
    """Discrete measure ``sum_k pi_k delta_{t_k}`` with ``t_k > 0``."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.locations, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if t.shape != w.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("locations and weights must be matching non-empty 1d arrays")
        if np.any(t <= 0):
            raise ValueError("atom locations must be > 0")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        object.__setattr__(self, "locations", t)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point(cls, t=1.0):
        return cls([t], [1.0])

    @classmethod
    def from_eigenvalues(cls, eigenvalues, decimals=12):
        """Empirical spectral measure, merging eigenvalues equal after rounding."""
        ev = np.asarray(eigenvalues, dtype=np.float64).ravel()
        t, counts = np.unique(np.round(ev, decimals), return_counts=True)
        return cls(t, counts / ev.size)

    @classmethod
    def from_matrix(cls, T):
        return cls.from_eigenvalues(np.linalg.eigvalsh(np.asarray(T, dtype=np.float64)))

    @property
    def mean(self):
        return float(self.locations @ self.weights)

    def to_dict(self):
        return {"atoms": [{"t": float(t), "pi": float(w)} for t, w in zip(self.locations, self.weights)]}

    @classmethod
    def from_dict(cls, d):
        atoms = d["atoms"]
        return cls([a["t"] for a in atoms], [a["pi"] for a in atoms])

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    s: complex
    residual: float
    iterations: int


def stieltjes_map(H, y, z, s):
    """Right-hand side ``sum_k pi_k / (t_k (1 - y - y z s) - z)``."""
    z = np.asarray(z, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    a = (1 - y - y * z * s)[..., None]
    return np.sum(H.weights / (H.locations * a - z[..., None]), axis=-1)


def _check(H, y, z):
    if not isinstance(H, SpectralMeasure):
        raise TypeError("H must be a SpectralMeasure")
    if not 0 < y < 1:
        raise ValueError(f"y must lie in (0, 1), got {y}")
    z = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    if np.any(z.imag <= 0):
        raise ValueError("evaluation points need Im z > 0")
    return z


def stieltjes_solve_many(H, y, z, damping=DAMPING, tol=TOL, max_iter=MAX_ITER):
    """Solve at many points at once.

    Returns ``(s, residual, iterations, converged)`` arrays. Points that do
    not settle keep their last iterate and ``converged=False``.
    """
    y = float(y)
    z = _check(H, y, z)
    s = -1.0 / z
    active = np.ones(z.shape, dtype=bool)
    iters = np.zeros(z.shape, dtype=np.int64)
    for _ in range(max_iter):
        if not active.any():
            break
        za, sa = z[active], s[active]
        new = (1 - damping) * sa + damping * stieltjes_map(H, y, za, sa)
        bad = new.imag <= 0
        if bad.any():
            # keep the iterate in the upper half-plane (Herglotz branch)
            new[bad] = new[bad].real + 1j * np.abs(sa[bad].imag) * 0.5
        step = np.abs(new - sa)
        s[active] = new
        iters[active] += 1
        idx = np.flatnonzero(active)
        active[idx[step < tol]] = False
    residual = np.abs(s - stieltjes_map(H, y, z, s))
    return s, residual, iters, ~active


def stieltjes_solve(H, y, z, damping=DAMPING, tol=TOL, max_iter=MAX_ITER):
    """Stieltjes transform of the generalised MP law at one point ``z``.

    Damped iteration ``s <- (1 - d) s + d F(s)`` from ``s0 = -1/z`` until
    successive iterates differ by less than ``tol``.

    Raises
    ------
    StieltjesConvergenceError
        After ``max_iter`` iterations without convergence; carries the last
        iterate and its residual.
    """
    s, res, it, ok = stieltjes_solve_many(H, y, [z], damping, tol, max_iter)
    if not ok[0]:
        raise StieltjesConvergenceError(
            f"Stieltjes iteration at z={z} did not converge in {max_iter} steps "
            f"(residual {res[0]:.3g})",
            complex(z),
            complex(s[0]),
            float(res[0]),
        )
    return StieltjesSolution(complex(z), complex(s[0]), float(res[0]), int(it[0]))


def mp_stieltjes(y, z):
    """Closed-form Stieltjes transform of the MP law (``H = delta_1``).

    Root of ``y z s^2 + (z + y - 1) s + 1 = 0`` with ``Im s > 0``.
    """
    z = np.asarray(z, dtype=np.complex128)
    b = z + y - 1
    disc = np.sqrt(b * b - 4 * y * z)
    r1 = (-b + disc) / (2 * y * z)
    r2 = (-b - disc) / (2 * y * z)
    return np.where(r1.imag > 0, r1, r2)


@dataclass
class DensityCurve:
    x: np.ndarray
    rho: np.ndarray
    converged: np.ndarray
    eta: float

    @property
    def flagged(self):
        return np.flatnonzero(~self.converged)

    def mass(self):
        return float(np.trapezoid(self.rho, self.x))

    def cdf(self):
        """Vectorised CDF from cumulative trapezoid integration of the curve.

        The running integral is divided by the total so the result ends at
        one; mass lost to the finite grid is reported by :meth:`mass`.
        """
        cum = np.concatenate(
            [[0.0], np.cumsum(0.5 * (self.rho[1:] + self.rho[:-1]) * np.diff(self.x))]
        )
        cum /= cum[-1]
        x = self.x

        def F(t):
            return np.interp(t, x, cum, left=0.0, right=1.0)

        return F

    def to_csv(self, path):
        np.savetxt(
            path,
            np.column_stack([self.x, self.rho]),
            fmt="%.17g",
            delimiter=",",
            header="x,rho",
            comments="",
        )


def density_from_stieltjes(H, y, grid, eta=1e-4, **solver_kw):
    """Density ``Im s(x + i eta) / pi`` of the generalised MP law on ``grid``.

    Points where the solver does not converge are flagged in
    ``DensityCurve.converged`` rather than raising.
    """
    if not eta > 0:
        raise ValueError("eta must be > 0")
    x = np.asarray(grid, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("grid must be finite")
    s, _, _, ok = stieltjes_solve_many(H, y, x + 1j * eta, **solver_kw)
    rho = np.clip(s.imag / np.pi, 0.0, None)
    return DensityCurve(x, rho, ok, float(eta))
