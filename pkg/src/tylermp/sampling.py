"""Seeded generators for the Gaussian, elliptical and spiked data models.

Every sampler takes a :class:`SeedSpec` and is a pure function of it, so
trials can run in any order or in parallel and still reproduce bit-for-bit.

Seed derivation
---------------
The per-trial stream is ``numpy.random.SeedSequence(master, spawn_key=(trial,))``
driving a PCG64 generator. SeedSequence hashes the (master, spawn_key) pair
through its 32-bit-word mixing function, which is the same construction numpy
uses for ``SeedSequence.spawn``; distinct trial indices give streams that do
not share state. Extra sub-stream keys can be appended with
:meth:`SeedSpec.child`.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import NotPositiveDefiniteError, check_data, check_symmetric

__all__ = [
    "SeedSpec",
    "ShapeMatrix",
    "GaussianRadius",
    "StudentT",
    "FixedRadius",
    "sample_gaussian",
    "sample_with_shape",
    "spike_shape",
    "project_sphere",
    "dump_csv",
    "load_csv",
]

_UINT64 = 2**64


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus trial index; ``key`` holds optional sub-stream ids."""

    master: int
    trial: int = 0
    key: tuple = ()

    def __post_init__(self):
        if self.trial < 0:
            raise ValueError("trial index must be >= 0")
        if any(k < 0 for k in self.key):
            raise ValueError("sub-stream keys must be >= 0")

    def child(self, *key):
        return SeedSpec(self.master, self.trial, self.key + tuple(key))

    def seed_sequence(self):
        return np.random.SeedSequence(
            self.master % _UINT64, spawn_key=(self.trial,) + tuple(self.key)
        )

    def rng(self):
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def _as_rng(seed):
    if isinstance(seed, SeedSpec):
        return seed.rng()
    if isinstance(seed, (int, np.integer)):
        return SeedSpec(int(seed)).rng()
    raise TypeError(f"seed must be a SeedSpec or int, got {type(seed).__name__}")


class ShapeMatrix:
    """Symmetric positive definite shape (scatter) matrix ``T_p``.

    The symmetric square root is computed once from an eigendecomposition
    and cached.
    """

    def __init__(self, matrix):
        M = check_symmetric(matrix, name="shape matrix")
        M = 0.5 * (M + M.T)
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("shape matrix is not positive definite") from exc
        self.matrix = M
        self.matrix.setflags(write=False)

    @property
    def p(self):
        return self.matrix.shape[0]

    @cached_property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    @property
    def min_eigenvalue(self):
        return float(self.eigenvalues[0])

    @cached_property
    def sqrt(self):
        vals, vecs = np.linalg.eigh(self.matrix)
        return (vecs * np.sqrt(vals)) @ vecs.T

    @cached_property
    def inv_sqrt(self):
        vals, vecs = np.linalg.eigh(self.matrix)
        return (vecs / np.sqrt(vals)) @ vecs.T

    @classmethod
    def identity(cls, p):
        return cls(np.eye(p))

    def __repr__(self):
        return f"ShapeMatrix(p={self.p}, min_eig={self.min_eigenvalue:.4g})"


@dataclass(frozen=True)
class GaussianRadius:
    """Radius of a standard normal p-vector (chi with p dof); gives N(0, T)."""

    name: str = field(default="gaussian", init=False)


@dataclass(frozen=True)
class StudentT:
    """Multivariate t with ``dof`` degrees of freedom."""

    dof: float = 1.0
    name: str = field(default="student-t", init=False)

    def __post_init__(self):
        if not self.dof > 0:
            raise ValueError(f"dof must be > 0, got {self.dof}")


@dataclass(frozen=True)
class FixedRadius:
    radius: float
    name: str = field(default="fixed", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")


def _check_np(n, p):
    if int(n) < 1 or int(p) < 1:
        raise ValueError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    return int(n), int(p)


def sample_gaussian(n, p, seed):
    """Draw ``n`` i.i.d. N(0, I_p) rows."""
    n, p = _check_np(n, p)
    return _as_rng(seed).standard_normal((n, p))


def sample_with_shape(n, shape, radial, seed):
    """Draw ``n`` rows ``r * T^{1/2} u`` with ``u`` uniform on the sphere.

    Parameters
    ----------
    n : int
        Number of samples.
    shape : ShapeMatrix or array-like
        Positive definite ``p x p`` shape matrix ``T``.
    radial : GaussianRadius, StudentT or FixedRadius
        Law of the radius ``r``. ``GaussianRadius`` reproduces N(0, T) and
        ``StudentT(nu)`` reproduces the zero-mean multivariate t_nu(0, T).
    seed : SeedSpec or int

    Returns
    -------
    ndarray of shape (n, p)
    """
    if not isinstance(shape, ShapeMatrix):
        shape = ShapeMatrix(shape)
    n, p = _check_np(n, shape.p)
    rng = _as_rng(seed)
    # z carries both the direction (z / |z|) and, for the Gaussian and t
    # radials, the chi_p factor of the radius.
    z = rng.standard_normal((n, p))
    if isinstance(radial, GaussianRadius):
        # fresh chi_p radius, independent of the direction
        r_over_norm = np.linalg.norm(rng.standard_normal((n, p)), axis=1)
        r_over_norm /= np.linalg.norm(z, axis=1)
    elif isinstance(radial, StudentT):
        g = rng.chisquare(radial.dof, size=n)
        r_over_norm = 1.0 / np.sqrt(g / radial.dof)
    elif isinstance(radial, FixedRadius):
        r_over_norm = radial.radius / np.linalg.norm(z, axis=1)
    else:
        raise TypeError(f"unknown radial law {radial!r}")
    return (z * r_over_norm[:, None]) @ shape.sqrt


def spike_shape(p, spikes=()):
    """Diagonal shape ``diag(l_1, ..., l_r, 1, ..., 1)``."""
    spikes = [float(s) for s in spikes]
    if len(spikes) > p:
        raise ValueError(f"{len(spikes)} spikes do not fit in dimension {p}")
    if any(s < 1 for s in spikes):
        raise ValueError("spike amplitudes must be >= 1")
    diag = np.ones(p)
    diag[: len(spikes)] = spikes
    return ShapeMatrix(np.diag(diag))


def project_sphere(X):
    """Scale every row of ``X`` to unit Euclidean norm."""
    X = check_data(X)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("cannot project a zero row onto the sphere")
    return X / norms[:, None]


def dump_csv(X, path):
    """Write one sample per row with 17 significant digits (lossless)."""
    np.savetxt(path, np.asarray(X, dtype=np.float64), fmt="%.17g", delimiter=",")


def load_csv(path):
    """Read a sample CSV, skipping a header line if its first cell is not numeric."""
    with open(path) as fh:
        first = fh.readline()
    cell = first.split(",")[0].strip()
    try:
        float(cell)
        skip = 0
    except ValueError:
        skip = 1
    X = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2, dtype=np.float64)
    return check_data(X)
