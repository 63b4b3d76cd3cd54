"""Closed forms and deterministic functionals.

Selection probabilities, the scale function and exit probabilities, the
exit-time functional, the stationary law of the frozen fast equation, the
averaged slow drift, and empirical total-variation distances.

Quadrature uses :func:`scipy.integrate.quad` (QUADPACK adaptive
Gauss-Kronrod) with absolute tolerance ``1e-10`` and relative tolerance
``1e-8``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .coeffs import SmallNoiseModel, check_exponent
from .errors import DomainError, QuadratureError

__all__ = [
    "EPSABS",
    "EPSREL",
    "FrozenParams",
    "selection_probabilities",
    "stretched_exp_integral",
    "gamma_asymptotic",
    "scale_function",
    "exit_probability_quadrature",
    "exit_time_functional",
    "exit_time_bound",
    "noiseless_exit_time",
    "InvariantDensity",
    "invariant_density",
    "relaxation_time",
    "averaged_drift",
    "histogram_probs",
    "empirical_tv",
    "tv_to_masses",
    "quad_semi_infinite",
]

EPSABS = 1e-10
EPSREL = 1e-8


def _quad(f, a, b, **kw):
    """``quad`` with the package tolerances; raises on a poor result."""
    kw.setdefault("epsabs", EPSABS)
    kw.setdefault("epsrel", EPSREL)
    kw.setdefault("limit", 200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(f, a, b, full_output=1, **kw)
    val, err = out[0], out[1]
    if not np.isfinite(val):
        raise QuadratureError(f"quadrature on [{a}, {b}] returned {val}", achieved=err)
    if len(out) > 3 and err > max(1e-6, 1e-5 * abs(val)):
        raise QuadratureError(
            f"quadrature on [{a}, {b}] did not converge: estimate {val:.6g}, error {err:.3g}",
            achieved=err,
        )
    return val


def quad_semi_infinite(f, scale: float = 1.0, points=(0.5,)) -> float:
    """``integral of f over [0, inf)`` via the map ``y = scale * u / (1 - u)``.

    Parameters
    ----------
    f : callable
        Integrand on ``[0, inf)``; must decay fast enough to be integrable.
    scale : float
        Length scale of ``f``; the map sends ``u = 1/2`` to ``y = scale``.
    points : sequence of float
        Breakpoints in ``(0, 1)`` passed to the adaptive rule.
    """

    def g(u):
        if u >= 1.0:
            return 0.0
        return f(scale * u / (1.0 - u)) * scale / (1.0 - u) ** 2

    return _quad(g, 0.0, 1.0, points=list(points))


# ---------------------------------------------------------------------------
# frozen parameters and selection


@dataclass(frozen=True)
class FrozenParams:
    """Branch values of the fast rate and fast noise on the hyperplane.

    ``rate_plus``/``rate_minus`` are the fast-drift coefficients at
    ``(x, 0)`` on the two sides, ``noise_plus``/``noise_minus`` the fast
    diffusion coefficients there.
    """

    rate_plus: float
    rate_minus: float
    noise_plus: float = 1.0
    noise_minus: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "gamma", check_exponent(self.gamma))
        for name in ("rate_plus", "rate_minus", "noise_plus", "noise_minus"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.noise_plus <= 0 or self.noise_minus <= 0:
            raise DomainError("noise values must be positive")

    @classmethod
    def from_model(cls, m: SmallNoiseModel, x=None) -> "FrozenParams":
        rp, rm, sp, sm = m.frozen(x)
        return cls(rp, rm, abs(sp), abs(sm), m.gamma)

    @property
    def repulsive(self) -> bool:
        return self.rate_plus > 0 and self.rate_minus > 0

    @property
    def attractive(self) -> bool:
        return self.rate_plus < 0 and self.rate_minus < 0

    def require(self, regime: str) -> None:
        ok = self.repulsive if regime == "repulsive" else self.attractive
        if not ok:
            raise DomainError(
                f"{regime} regime needs rates of the same strict sign, got "
                f"({self.rate_plus}, {self.rate_minus})"
            )


def selection_probabilities(p: FrozenParams) -> tuple[float, float]:
    """Limit probabilities of leaving the hyperplane downward and upward.

    ``p_plus = w+ / (w- + w+)`` with ``w = (rate / noise**2)**(1/(gamma+1))``
    and ``p_minus = 1 - p_plus``.

    Returns
    -------
    (p_minus, p_plus)

    Raises
    ------
    DomainError
        If either rate is not positive.
    """
    p.require("repulsive")
    e = 1.0 / (p.gamma + 1.0)
    wp = (p.rate_plus / p.noise_plus**2) ** e
    wm = (p.rate_minus / p.noise_minus**2) ** e
    p_plus = wp / (wm + wp)
    return 1.0 - p_plus, p_plus


# ---------------------------------------------------------------------------
# scale function and exit probabilities


def gamma_asymptotic(A: float, eps: float, gamma: float) -> float:
    """Small-``eps`` limit form ``(1/(1+g)) (eps^2/A)^(1/(1+g)) Gamma(1/(1+g))``."""
    if not (A > 0 and eps > 0):
        raise DomainError("asymptotic form needs A > 0 and eps > 0")
    e = 1.0 / (1.0 + gamma)
    return e * (eps * eps / A) ** e * special.gamma(e)


def stretched_exp_integral(delta: float, A: float, eps: float, gamma: float) -> float:
    """Adaptive quadrature of ``integral_0^delta exp(-A z^(gamma+1) / eps^2) dz``.

    For ``A > 0`` the integrand is rescaled by its width
    ``(eps^2/A)^(1/(gamma+1))`` and split at fixed breakpoints before
    integration. ``A = 0`` returns ``delta``.
    """
    if delta < 0:
        raise DomainError("upper limit must be non-negative")
    if not eps > 0:
        raise DomainError("eps must be positive")
    if delta == 0:
        return 0.0
    g1 = gamma + 1.0
    if A == 0:
        return float(delta)
    if A < 0:
        return _quad(lambda z: np.exp(-A * z**g1 / eps**2), 0.0, delta)
    L = (eps * eps / A) ** (1.0 / g1)
    U = delta / L
    f = lambda u: np.exp(-(u**g1))  # noqa: E731
    head = min(U, 40.0)
    pts = [p for p in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0) if p < head]
    val = _quad(f, 0.0, head, points=pts or None)
    if U > head:
        val += _quad(f, head, U)
    return L * val


def _branch_exponents(p: FrozenParams, nu: float) -> tuple[float, float]:
    g1 = p.gamma + 1.0
    if not (nu < p.noise_plus**2):
        raise DomainError("slack nu must be below noise_plus**2")
    Ap = 2.0 * (p.rate_plus + nu) / (g1 * (p.noise_plus**2 - nu))
    Am = 2.0 * (p.rate_minus - nu) / (g1 * (p.noise_minus**2 + nu))
    return Ap, Am


def scale_function(y: float, p: FrozenParams, eps: float, nu: float = 0.0) -> float:
    """Scale function of the fast coordinate near the hyperplane.

    ``s(y) = integral_0^y exp(-2 (r+ + nu) z^(g+1) / (eps^2 (g+1) (s+^2 - nu))) dz``
    for ``y >= 0``, and the mirrored branch with ``(r- - nu)`` and
    ``(s-^2 + nu)`` for ``y < 0`` (negative values there).

    Parameters
    ----------
    y : float
    p : FrozenParams
    eps : float
        Noise intensity, positive.
    nu : float
        Non-negative slack that perturbs the coefficients.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if nu < 0:
        raise DomainError("slack nu must be non-negative")
    Ap, Am = _branch_exponents(p, nu)
    if y >= 0:
        return stretched_exp_integral(float(y), Ap, eps, p.gamma)
    return -stretched_exp_integral(float(-y), Am, eps, p.gamma)


def exit_probability_quadrature(delta: float, p: FrozenParams, eps: float,
                                nu: float = 0.0) -> float:
    """Probability of leaving ``(-delta, delta)`` at ``+delta`` from 0.

    Computed as ``-s(-delta) / (s(delta) - s(-delta))`` with the scale
    function of :func:`scale_function`.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    sp = scale_function(delta, p, eps, nu)
    sm = scale_function(-delta, p, eps, nu)
    return -sm / (sp - sm)


# ---------------------------------------------------------------------------
# exit time


def _layer_profile(M: float, a: float) -> float:
    # J(M) = integral_0^M exp(-s) (M - s)^(-a) ds
    if M <= 0:
        return 0.0
    head = min(M, 60.0)
    if head == M:
        return _quad(lambda s: np.exp(-s), 0.0, M, weight="alg", wvar=(0.0, -a))
    val = _quad(lambda s: np.exp(-s) * (M - s) ** (-a), 0.0, head)
    val += _quad(lambda s: np.exp(-s), head, M, weight="alg", wvar=(0.0, -a))
    return val


def exit_time_functional(x: float, A: float, eps: float, gamma: float) -> float:
    """Upper bound on the mean exit time from ``(-|x|, |x|)`` for unit noise.

    ``v(x) = integral_0^|x| exp(-2A y^(g+1)/((g+1) eps^2))
    integral_0^y (2/eps^2) exp(2A z^(g+1)/((g+1) eps^2)) dz dy``.

    The inner integral is evaluated in the stable form
    ``(k^a / A) J(k y^(g+1))`` with ``k = 2A/((g+1) eps^2)``,
    ``a = g/(g+1)`` and ``J(M) = integral_0^M e^-s (M-s)^-a ds`` (an
    algebraic-endpoint weight handled by QUADPACK); the outer integral is
    adaptive with breakpoints at the boundary-layer scales.

    Parameters
    ----------
    x : float
    A : float
        Lower bound of the drift coefficient, ``A > 0``.
    eps : float
    gamma : float
    """
    gamma = check_exponent(gamma)
    if not (A > 0 and eps > 0):
        raise DomainError("exit-time functional needs A > 0 and eps > 0")
    X = abs(float(x))
    if X == 0:
        return 0.0
    g1 = gamma + 1.0
    k = 2.0 * A / (g1 * eps * eps)
    a = gamma / g1
    pref = k**a / A

    def inner(y):
        return pref * _layer_profile(k * y**g1, a)

    pts = [(c / k) ** (1.0 / g1) for c in (0.1, 1.0, 10.0, 100.0)]
    pts = [p for p in pts if p < X]
    return _quad(inner, 0.0, X, points=pts or None)


def noiseless_exit_time(delta: float, rate: float, gamma: float) -> float:
    """Time for ``y' = rate * y**gamma`` to go from ``0+`` to ``delta``."""
    return delta ** (1.0 - gamma) / ((1.0 - gamma) * rate)


def exit_time_bound(delta: float, p: FrozenParams, eps: float) -> float:
    """Mean exit-time bound for a model with bounded non-unit noise.

    A time change reduces the problem to unit noise with drift lower bound
    ``min(rate) / max(noise)^2``; the bound is divided by ``min(noise)^2``.
    For unit noise this equals :func:`exit_time_functional`.
    """
    p.require("repulsive")
    smax = max(p.noise_plus, p.noise_minus)
    smin = min(p.noise_plus, p.noise_minus)
    A = min(p.rate_plus, p.rate_minus) / smax**2
    return exit_time_functional(delta, A, eps, p.gamma) / smin**2


# ---------------------------------------------------------------------------
# stationary law of the frozen equation

CONVENTIONS = ("stationary", "printed")


@dataclass(frozen=True)
class InvariantDensity:
    """Stationary law of the frozen fast equation (attractive rates).

    With ``convention="stationary"`` (default) the density is the exact
    stationary law of ``dy = r(y) signed_pow(y, g) dt + s(y) dW``::

        p(y) = c s+^-2 exp(-2|r+| y^(g+1) / ((g+1) s+^2)),   y >= 0
        p(y) = c s-^-2 exp(-2|r-| |y|^(g+1) / ((g+1) s-^2)), y < 0

    With ``convention="printed"`` the factor 2 and the ``s^-2`` prefactor
    are dropped. Both coincide in mass split when ``s+ == s-``.

    Attributes
    ----------
    params : FrozenParams
    convention : str
    c : float
        Normalization constant.
    """

    params: FrozenParams
    convention: str = "stationary"

    def __post_init__(self):
        self.params.require("attractive")
        if self.convention not in CONVENTIONS:
            raise DomainError(f"convention must be one of {CONVENTIONS}")

    def _side(self, sign: int) -> tuple[float, float]:
        p = self.params
        g1 = p.gamma + 1.0
        r = abs(p.rate_plus if sign > 0 else p.rate_minus)
        s = p.noise_plus if sign > 0 else p.noise_minus
        if self.convention == "stationary":
            return s**-2, 2.0 * r / (g1 * s * s)
        return 1.0, r / (g1 * s * s)

    def _side_mass(self, sign: int) -> float:
        # unnormalized mass of one half-line
        pref, k = self._side(sign)
        e = 1.0 / (self.params.gamma + 1.0)
        return pref * e * special.gamma(e) * k ** (-e)

    @property
    def c(self) -> float:
        return 1.0 / (self._side_mass(1) + self._side_mass(-1))

    @property
    def mass_plus(self) -> float:
        mp, mm = self._side_mass(1), self._side_mass(-1)
        return mp / (mp + mm)

    @property
    def mass_minus(self) -> float:
        return 1.0 - self.mass_plus

    @property
    def scales(self) -> tuple[float, float]:
        """Width ``k**(-1/(g+1))`` of each branch, ``(plus, minus)``."""
        e = 1.0 / (self.params.gamma + 1.0)
        return self._side(1)[1] ** -e, self._side(-1)[1] ** -e

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        g1 = self.params.gamma + 1.0
        pp, kp = self._side(1)
        pm, km = self._side(-1)
        a = np.abs(y) ** g1
        out = self.c * np.where(y >= 0, pp * np.exp(-kp * a), pm * np.exp(-km * a))
        return out if out.ndim else float(out)

    def cdf(self, y):
        """Closed-form distribution function via regularized incomplete gammas."""
        y = np.asarray(y, dtype=float)
        g1 = self.params.gamma + 1.0
        e = 1.0 / g1
        _, kp = self._side(1)
        _, km = self._side(-1)
        a = np.abs(y) ** g1
        lower = self.mass_minus * special.gammaincc(e, km * a)
        upper = self.mass_minus + self.mass_plus * special.gammainc(e, kp * a)
        out = np.where(y < 0, lower, upper)
        return out if out.ndim else float(out)

    def quantile_range(self, tail: float = 5e-4) -> tuple[float, float]:
        """Interval holding all but ``tail`` mass in each tail."""
        g1 = self.params.gamma + 1.0
        e = 1.0 / g1
        _, kp = self._side(1)
        _, km = self._side(-1)
        qm = min(tail / self.mass_minus, 1.0)
        qp = min(tail / self.mass_plus, 1.0)
        lo = -(special.gammainccinv(e, qm) / km) ** e
        hi = (special.gammainccinv(e, qp) / kp) ** e
        return float(lo), float(hi)

    def bin_masses(self, edges) -> np.ndarray:
        """Masses of the bins given by ``edges`` plus the two overflow bins.

        Returns ``[P(y < e0), P(e0 <= y < e1), ..., P(y >= e_last)]``.
        """
        F = self.cdf(np.asarray(edges, dtype=float))
        return np.concatenate([[F[0]], np.diff(F), [1.0 - F[-1]]])

    def total_mass_quadrature(self) -> float:
        """Quadrature of the density over the real line (independent check)."""
        sp, sm = self.scales
        up = quad_semi_infinite(lambda y: self.pdf(y), sp)
        dn = quad_semi_infinite(lambda y: self.pdf(-y), sm)
        return up + dn


def invariant_density(p: FrozenParams, convention: str = "stationary") -> InvariantDensity:
    """Stationary law of the frozen fast equation; see :class:`InvariantDensity`.

    Raises
    ------
    DomainError
        If either rate is not negative.
    """
    return InvariantDensity(p, convention)


def relaxation_time(p: FrozenParams) -> float:
    """Relaxation time ``max |r|^-1 w^(1-g)`` with layer width ``w = (s^2/|r|)^(1/(g+1))``."""
    g = p.gamma
    out = 0.0
    for r, s in ((p.rate_plus, p.noise_plus), (p.rate_minus, p.noise_minus)):
        w = (s * s / abs(r)) ** (1.0 / (g + 1.0))
        out = max(out, w ** (1.0 - g) / abs(r))
    return out


def averaged_drift(x, m: SmallNoiseModel, convention: str = "stationary") -> np.ndarray:
    """Slow drift averaged over the stationary law of the frozen fast equation.

    ``drift+(x, 0) * mass_plus + drift-(x, 0) * mass_minus``, with both
    branch values taken on the hyperplane.

    Raises
    ------
    DomainError
        If the rates at ``(x, 0)`` are not both negative.
    """
    x = np.asarray(x, dtype=float).reshape(1, m.d)
    dens = invariant_density(FrozenParams.from_model(m, x[0]), convention)
    zero = np.zeros(1)
    up = m.drift.plus(x, zero)[0]
    dn = m.drift.minus(x, zero)[0]
    return dens.mass_plus * up + dens.mass_minus * dn


# ---------------------------------------------------------------------------
# empirical distances


def _edges(bins) -> np.ndarray:
    if isinstance(bins, tuple) and len(bins) == 3:
        lo, hi, nb = bins
        if not (hi > lo and int(nb) >= 1):
            raise DomainError("binning spec needs hi > lo and at least one bin")
        return np.linspace(float(lo), float(hi), int(nb) + 1)
    e = np.asarray(bins, dtype=float)
    if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
        raise DomainError("bin edges must be strictly increasing")
    return e


def histogram_probs(samples, bins) -> np.ndarray:
    """Histogram probabilities with two overflow bins (below, above)."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise DomainError("sample set is empty")
    e = _edges(bins)
    idx = np.searchsorted(e, s, side="right")
    counts = np.bincount(idx, minlength=e.size + 1)
    return counts / s.size


def empirical_tv(samples_a, samples_b, bins=(-5.0, 5.0, 64)) -> float:
    """Half L1 distance between histogram probability vectors.

    Parameters
    ----------
    samples_a, samples_b : array_like
    bins : (lo, hi, nbins) or array of edges
        Common bins; mass outside ``[lo, hi)`` goes to two overflow bins.
    """
    pa = histogram_probs(samples_a, bins)
    pb = histogram_probs(samples_b, bins)
    return float(min(1.0, 0.5 * np.abs(pa - pb).sum()))


def tv_to_masses(samples, bins, masses) -> float:
    """Half L1 distance between a sample histogram and exact bin masses.

    ``masses`` must include the two overflow bins, as returned by
    :meth:`InvariantDensity.bin_masses`.
    """
    pa = histogram_probs(samples, bins)
    masses = np.asarray(masses, dtype=float)
    if masses.shape != pa.shape:
        raise DomainError("bin masses must include the two overflow bins")
    return float(min(1.0, 0.5 * np.abs(pa - masses).sum()))
