"""Weight functions ``u`` for Maronna's M-estimator.

A weight function is wrapped with ``psi(x) = x * u(x)``, an optional
closed-form inverse of ``psi``, and grid-based checks of the regularity
assumptions used by the large-(n, p) theory:

* A1 -- ``u > 0``, ``psi`` strictly increasing, ``lim psi > y``;
* A2 -- ``x u'(x) < u(x)``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "WeightFn",
    "PsiRangeError",
    "ValidationReport",
    "constant_weight",
    "power_weight",
    "rational_weight",
    "tyler_weight",
    "parse_weight",
    "psi_inverse",
    "validate_u",
    "maronna_scaling",
]


class PsiRangeError(ValueError):
    """Target value lies outside the range of ``psi``."""


@dataclass(frozen=True)
class WeightFn:
    """Weight function ``u`` with ``psi(x) = x u(x)``.

    ``u`` must accept and return numpy arrays.
    """

    name: str
    u: Callable[[np.ndarray], np.ndarray]
    psi_inv: Optional[Callable[[float], float]] = field(default=None, compare=False)
    # sup of psi over (0, inf) when known in closed form
    psi_sup: Optional[float] = None

    def __call__(self, x):
        return self.u(np.asarray(x, dtype=np.float64))

    def psi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x * self.u(x)


def constant_weight():
    """``u = 1``: Maronna's estimator reduces to ``sum x x^T``."""
    return WeightFn(
        "one",
        lambda x: np.ones_like(x, dtype=np.float64),
        psi_inv=lambda t: float(t),
        psi_sup=np.inf,
    )


def power_weight(beta=-0.5):
    """``u(x) = x**beta``; ``psi(x) = x**(1 + beta)`` with beta > -1."""
    beta = float(beta)
    if not beta > -1:
        raise ValueError("power weight needs beta > -1 for psi to increase")
    return WeightFn(
        f"power:{beta:g}",
        lambda x: np.power(x, beta),
        psi_inv=lambda t: float(t) ** (1.0 / (1.0 + beta)),
        psi_sup=np.inf,
    )


def rational_weight(alpha=2.0):
    """``u(x) = (1 + alpha) / (alpha + x)``; ``psi`` increases to ``1 + alpha``."""
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError("rational weight needs alpha > 0")

    def inv(t):
        t = float(t)
        if not 0 <= t < 1 + alpha:
            raise PsiRangeError(f"t={t} outside the range [0, {1 + alpha}) of psi")
        return t * alpha / (1 + alpha - t)

    return WeightFn(
        f"rational:{alpha:g}",
        lambda x: (1 + alpha) / (alpha + x),
        psi_inv=inv,
        psi_sup=1 + alpha,
    )


def tyler_weight(p):
    """Tyler's weight ``u(x) = p / x`` (psi is constant, so A1 fails)."""
    p = float(p)
    return WeightFn(f"tyler:{p:g}", lambda x: p / x, psi_sup=p)


def parse_weight(spec):
    """Build a weight from ``one``, ``power:<beta>`` or ``rational:<alpha>``."""
    kind, _, arg = spec.partition(":")
    if kind == "one" and not arg:
        return constant_weight()
    if kind == "power":
        return power_weight(float(arg) if arg else -0.5)
    if kind == "rational":
        return rational_weight(float(arg) if arg else 2.0)
    raise ValueError(f"unknown weight function {spec!r}")


def _bisect_psi(weight, t, rtol=1e-12, max_expand=2000):
    psi = lambda x: float(weight.psi(x))  # noqa: E731
    target_tol = rtol * max(1.0, abs(t))
    lo, hi = 0.0, 1.0
    # psi(0+) is taken from a tiny positive point: several u blow up at 0
    lo_val = psi(np.finfo(float).tiny)
    if t <= lo_val:
        raise PsiRangeError(f"t={t} is below inf psi ~ {lo_val}")
    expansions = 0
    while psi(hi) < t:
        lo = hi
        hi *= 2.0
        expansions += 1
        if expansions > max_expand or not np.isfinite(hi):
            raise PsiRangeError(f"t={t} is above sup psi (bracket reached {lo:g})")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = psi(mid)
        if abs(val - t) < target_tol * 1e-3:
            return mid
        if val < t:
            lo = mid
        else:
            hi = mid
    # bracket collapsed to adjacent floats; take the better end
    best = min((lo, hi), key=lambda x: abs(psi(x) - t)) if lo > 0 else hi
    if abs(psi(best) - t) >= target_tol:
        raise PsiRangeError(
            f"bisection could not resolve psi(x)={t} to {target_tol:g} "
            f"(closest {psi(best)!r}); psi may be flat or discontinuous here"
        )
    return best


def psi_inverse(weight, t, closed_form=True):
    """Solve ``psi(x) = t`` for ``x``.

    Uses the weight's closed form when available and ``closed_form`` is set,
    otherwise bisection with geometric bracket expansion, accurate to
    ``|psi(x) - t| < 1e-12 * max(1, t)``.

    Raises
    ------
    PsiRangeError
        If ``t`` is not in the range of ``psi``.
    """
    t = float(t)
    if weight.psi_sup is not None and t >= weight.psi_sup:
        raise PsiRangeError(f"t={t} >= sup psi = {weight.psi_sup} for {weight.name}")
    if closed_form and weight.psi_inv is not None:
        return float(weight.psi_inv(t))
    return _bisect_psi(weight, t)


@dataclass
class ValidationReport:
    weight: str
    y: float
    x_max: float
    positive: bool
    a1_increasing: bool
    a1_limit: bool
    a2: bool
    failures: list = field(default_factory=list)

    @property
    def a1(self):
        return self.positive and self.a1_increasing and self.a1_limit

    @property
    def ok(self):
        return self.a1 and self.a2

    def __bool__(self):
        return self.ok


def validate_u(weight, y, x_max=None, num=2000, x_min=1e-6, rtol=1e-9):
    """Check positivity, A1 and A2 on a log-spaced grid over ``[x_min, x_max]``.

    ``x_max`` defaults to ``max(100, 10 * y)``; it must be at least ``10 * y``.
    Strict inequalities are enforced with a relative margin ``rtol`` so
    that floating-point noise does not count as strict increase.
    A2 uses central finite differences for ``u'``.
    """
    y = float(y)
    if x_max is None:
        x_max = max(100.0, 10.0 * y)
    if x_max < 10.0 * y:
        raise ValueError(f"grid max {x_max} must be >= 10 * y = {10 * y}")
    x = np.geomspace(x_min, x_max, num)
    failures = []

    with np.errstate(all="ignore"):
        u = weight(x)
        psi = x * u
        positive = bool(np.all(np.isfinite(u)) and np.all(u > 0))
        if not positive:
            failures.append("u is not strictly positive and finite on the grid")

        dpsi = np.diff(psi)
        increasing = bool(np.all(dpsi > rtol * np.abs(psi[1:])))
        if not increasing:
            k = int(np.argmin(dpsi - rtol * np.abs(psi[1:])))
            failures.append(f"A1: psi not strictly increasing near x={x[k]:.4g}")

        limit = bool(psi[-1] > y)
        if not limit:
            failures.append(f"A1: psi(x_max)={psi[-1]:.4g} does not exceed y={y}")

        h = 1e-5 * x
        du = (weight(x + h) - weight(x - h)) / (2 * h)
        gap = u - x * du
        a2 = bool(np.all(gap > rtol * np.abs(u) + 1e-6 * np.abs(u)))
        if not a2:
            k = int(np.argmin(gap))
            failures.append(f"A2: x u'(x) >= u(x) near x={x[k]:.4g}")

    return ValidationReport(
        weight=weight.name,
        y=y,
        x_max=float(x_max),
        positive=positive,
        a1_increasing=increasing,
        a1_limit=limit,
        a2=a2,
        failures=failures,
    )


def maronna_scaling(weight, y, n, convention="derived"):
    """Factor mapping Maronna's estimate onto the sample covariance scale.

    ``paper`` returns ``1 / (n psi^{-1}(1/y))``. ``derived`` returns
    ``1 / (n u(psi^{-1}(y)))``, the factor implied by the quadratic forms
    ``x_i^T (n S)^{-1} x_i`` concentrating at ``p/n = y``. For ``u = 1`` only
    the derived factor reproduces ``sum x x^T = n S`` exactly.
    """
    y = float(y)
    if not 0 < y < 1:
        raise ValueError(f"y must lie in (0, 1), got {y}")
    if convention == "paper":
        return 1.0 / (n * psi_inverse(weight, 1.0 / y))
    if convention == "derived":
        x = psi_inverse(weight, y)
        return 1.0 / (n * float(weight(x)))
    raise ValueError(f"unknown scaling convention {convention!r}")
