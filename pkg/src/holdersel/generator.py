"""Averaged characteristics and the limit generator of the slow-fast system.

The slow component of a :class:`~holdersel.coeffs.TwoScaleModel` converges
to a jump-diffusion whose generator is

    L f(x) = grad f(x) . abar(x) + 1/2 trace(Hess f(x) bbar(x))
             + sum_small w (f(x + v) - f(x) - grad f(x) . v)
             + sum_large w (f(x + v) - f(x)),

where ``abar`` and ``bbar`` average the slow drift and ``sigma sigma^T``
over the stationary law of the frozen fast equation and the two kernels
are the images of the small (``|u| <= cutoff``) and large marks of the
slow jump measure under ``u -> slow_jump(x, y) u``, averaged in ``y``.

The stationary law is represented as a weighted node set. It is computed
in closed form (generalized Gauss-Laguerre nodes on each half-line) when
the fast drift is a negative signed power with constant diffusion and no
fast jumps, and by sampling the frozen fast equation otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import special

from .analysis import FrozenParams, invariant_density
from .coeffs import (
    CoefficientField,
    Constant,
    SignedPower,
    TwoScaleModel,
    eval_field,
)
from .errors import DomainError, SamplingError

__all__ = [
    "BumpPolynomial",
    "test_function_registry",
    "JumpKernel",
    "FrozenLaw",
    "FrozenSampler",
    "AveragedCharacteristics",
    "averaged_characteristics",
    "generator_apply",
    "AveragedGenerator",
    "split_rhat",
    "closed_form_law",
    "sampled_law",
]


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class BumpPolynomial:
    """Monomial times a C2 bump: ``prod (x-c)_i**p_i * (1 - |x-c|^2/R^2)_+^3``.

    Parameters
    ----------
    powers : tuple of int
        Exponent per coordinate.
    radius : float
        Support radius ``R``.
    center : tuple of float, optional
        Center ``c`` (origin by default).
    """

    powers: tuple
    radius: float = 2.0
    center: tuple | None = None

    def __post_init__(self):
        p = tuple(int(v) for v in self.powers)
        if any(v < 0 for v in p) or not p:
            raise DomainError("powers must be non-negative integers, one per coordinate")
        if not self.radius > 0:
            raise DomainError("bump radius must be positive")
        object.__setattr__(self, "powers", p)
        c = (0.0,) * len(p) if self.center is None else tuple(float(v) for v in self.center)
        if len(c) != len(p):
            raise DomainError("center length must match powers")
        object.__setattr__(self, "center", c)

    @property
    def d(self) -> int:
        return len(self.powers)

    @property
    def name(self) -> str:
        mono = "*".join(f"x{i + 1}^{p}" for i, p in enumerate(self.powers) if p) or "1"
        return f"{mono}*bump(R={self.radius:g})"

    def _parts(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        z = x - np.asarray(self.center)
        R2 = self.radius ** 2
        q = 1.0 - np.sum(z * z, axis=1) / R2
        inside = q > 0
        q = np.where(inside, q, 0.0)
        p = np.asarray(self.powers)
        # monomial and its derivatives, coordinatewise
        zp = z ** p
        dz = np.where(p > 0, p * z ** np.maximum(p - 1, 0), 0.0)
        ddz = np.where(p > 1, p * (p - 1) * z ** np.maximum(p - 2, 0), 0.0)
        return z, q, zp, dz, ddz, R2

    def value(self, x) -> np.ndarray:
        """Values at points ``x`` of shape ``(n, d)``."""
        _, q, zp, _, _, _ = self._parts(x)
        return np.prod(zp, axis=1) * q ** 3

    def __call__(self, x) -> np.ndarray:
        return self.value(x)

    def grad(self, x) -> np.ndarray:
        """Gradients, shape ``(n, d)``."""
        z, q, zp, dz, _, R2 = self._parts(x)
        P, dP = self._mono(zp, dz)
        B = q ** 3
        dB = 3 * q[:, None] ** 2 * (-2 * z / R2)
        return P[:, None] * dB + B[:, None] * dP

    def hess(self, x) -> np.ndarray:
        """Hessians, shape ``(n, d, d)``."""
        z, q, zp, dz, ddz, R2 = self._parts(x)
        n, d = z.shape
        P, dP = self._mono(zp, dz)
        HP = self._mono_hess(zp, dz, ddz)
        B = q ** 3
        dq = -2 * z / R2
        dB = 3 * q[:, None] ** 2 * dq
        HB = (6 * q)[:, None, None] * dq[:, :, None] * dq[:, None, :] \
            + (3 * q ** 2 * (-2 / R2))[:, None, None] * np.eye(d)
        return (P[:, None, None] * HB + dP[:, :, None] * dB[:, None, :]
                + dB[:, :, None] * dP[:, None, :] + B[:, None, None] * HP)

    def _mono(self, zp, dz):
        P = np.prod(zp, axis=1)
        d = zp.shape[1]
        dP = np.empty_like(zp)
        for i in range(d):
            others = np.prod(np.delete(zp, i, axis=1), axis=1) if d > 1 else 1.0
            dP[:, i] = dz[:, i] * others
        return P, dP

    def _mono_hess(self, zp, dz, ddz):
        n, d = zp.shape
        H = np.empty((n, d, d))
        for i in range(d):
            for j in range(d):
                f = np.ones(n)
                for l in range(d):
                    if l == i and l == j:
                        f = f * ddz[:, l]
                    elif l == i or l == j:
                        f = f * dz[:, l]
                    else:
                        f = f * zp[:, l]
                H[:, i, j] = f
        return H


def test_function_registry(d: int, degree: int = 3, radius: float = 2.0,
                           center=None) -> dict[str, BumpPolynomial]:
    """All bump-polynomials with total degree ``<= degree`` in ``d`` variables."""
    if degree < 0:
        raise DomainError("degree must be non-negative")
    out = {}
    for powers in np.ndindex(*(degree + 1,) * d):
        if sum(powers) <= degree:
            f = BumpPolynomial(tuple(powers), radius, center)
            out[f.name] = f
    return out


# ---------------------------------------------------------------------------
# kernels and frozen laws


@dataclass(frozen=True)
class JumpKernel:
    """Finite measure ``sum_j weights[j] delta(amplitudes[j])`` on R^d."""

    amplitudes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        a = a.reshape(w.size, -1) if w.size else a.reshape(0, max(1, a.shape[-1] if a.ndim else 1))
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, d: int) -> "JumpKernel":
        return cls(np.empty((0, d)), np.empty(0))

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def compress(self, decimals: int = 12) -> "JumpKernel":
        """Merge identical amplitudes (after rounding) and drop zero weights."""
        keep = self.weights > 0
        a, w = self.amplitudes[keep], self.weights[keep]
        if not w.size:
            return JumpKernel(np.empty((0, self.amplitudes.shape[1])), np.empty(0))
        key = np.round(a, decimals)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        ws = np.bincount(inv, weights=w, minlength=uniq.shape[0])
        return JumpKernel(uniq, ws)


@dataclass(frozen=True)
class FrozenLaw:
    """Weighted node approximation of the frozen stationary law.

    Attributes
    ----------
    nodes : ndarray, shape (Q, k)
    weights : ndarray, shape (Q,)
        Sum to one.
    method : str
    chains : ndarray or None
        Per-chain draws ``(n_chains, n_draws, k)`` for sampled laws.
    rhat : float
        Split-chain diagnostic (1 for closed-form laws).
    """

    nodes: np.ndarray
    weights: np.ndarray
    method: str
    chains: np.ndarray | None = None
    rhat: float = 1.0


@dataclass(frozen=True)
class FrozenSampler:
    """How to obtain the frozen stationary law.

    Parameters
    ----------
    method : {"auto", "closed-form", "monte-carlo"}
        ``auto`` uses the closed form whenever the fast equation has
        signed-power drift, constant diffusion and no jumps.
    nodes : int
        Gauss-Laguerre nodes per half-line for the closed form.
    n_chains, n_draws : int
        Independent chains and retained draws per chain for sampling.
    dt, burn_in, thin : float
        Step, burn-in and spacing of retained draws, in fast time units.
    rhat_max : float
        Largest acceptable split-chain diagnostic.
    seed0 : int
        First chain seed.
    """

    method: str = "auto"
    nodes: int = 48
    n_chains: int = 32
    n_draws: int = 200
    dt: float = 0.01
    burn_in: float = 20.0
    thin: float = 0.5
    rhat_max: float = 1.05
    seed0: int = 0

    def __post_init__(self):
        if self.method not in ("auto", "closed-form", "monte-carlo"):
            raise DomainError(f"unknown frozen sampler method {self.method!r}")
        if self.n_chains < 2 or self.n_draws < 4:
            raise DomainError("sampling needs at least 2 chains of 4 draws")


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor.

    Parameters
    ----------
    chains : ndarray, shape (m, n)
        ``m`` chains of ``n`` draws of a scalar statistic.
    """
    c = np.asarray(chains, dtype=float)
    m, n = c.shape
    half = n // 2
    s = np.concatenate([c[:, :half], c[:, n - half:]], axis=0)
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    B = half * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var = (half - 1) / half * W + B / half
    return float(np.sqrt(var / W))


def _closed_form_params(m: TwoScaleModel):
    # signed-power fast drift with negative coefficients, constant diffusion
    if m.k != 1 or m.fast_measure is not None:
        return None
    A, S = m.fast_drift, m.fast_diffusion
    if not (isinstance(A.plus, SignedPower) and isinstance(A.minus, SignedPower)):
        return None
    if not (isinstance(S.plus, Constant) and isinstance(S.minus, Constant)):
        return None
    g = A.plus.exponent
    if A.minus.exponent != g or not 0 < g < 1:
        return None
    if np.any(A.plus.const != 0) or np.any(A.minus.const != 0):
        return None
    rp, rm = float(np.ravel(A.plus.coef)[0]), float(np.ravel(A.minus.coef)[0])
    if not (rp < 0 and rm < 0):
        return None
    sp = abs(float(np.ravel(S.plus.value)[0]))
    sm = abs(float(np.ravel(S.minus.value)[0]))
    return FrozenParams(rp, rm, sp, sm, g)


def closed_form_law(p: FrozenParams, nodes: int = 48) -> FrozenLaw:
    """Node set for the stationary density of the frozen equation.

    On each half-line the substitution ``s = k |y|**(g+1)`` turns the
    density into the generalized Laguerre weight ``s**(1/(g+1)-1) e**-s``.
    """
    dens = invariant_density(p)
    g1 = p.gamma + 1.0
    alpha = 1.0 / g1 - 1.0
    s, w = special.roots_genlaguerre(nodes, alpha)
    w = w / w.sum()
    sc_p, sc_m = dens.scales
    y = np.concatenate([sc_p * s ** (1 / g1), -sc_m * s ** (1 / g1)])
    wt = np.concatenate([dens.mass_plus * w, dens.mass_minus * w])
    return FrozenLaw(y.reshape(-1, 1), wt, "closed-form")


def _frozen_model(m: TwoScaleModel, x) -> TwoScaleModel:
    d = m.d
    zero_v = CoefficientField.constant(np.zeros(d))
    zero_m = CoefficientField.constant(np.zeros((d, d)))
    return replace(m, slow_drift=zero_v, slow_diffusion=zero_m, slow_jump=None,
                   slow_measure=None, residual=None, x0=tuple(np.ravel(x)))


def sampled_law(m: TwoScaleModel, x, sampler: FrozenSampler) -> FrozenLaw:
    """Sample the frozen fast equation at ``x`` with independent chains.

    Raises
    ------
    SamplingError
        If the split-chain diagnostic of any fast coordinate exceeds
        ``sampler.rhat_max``.
    """
    from .seeding import seed_range
    from .sim import StepPolicy, integrate_two_scale

    fm = _frozen_model(m, x)
    T = sampler.burn_in + sampler.thin * (sampler.n_draws - 1)
    cps = sampler.burn_in + sampler.thin * np.arange(sampler.n_draws)
    res = integrate_two_scale(fm, 1.0, T, StepPolicy(sampler.dt, "uniform"),
                              seed_range(sampler.seed0, sampler.n_chains), checkpoints=cps)
    chains = res.cp_y  # (n_chains, n_draws, k)
    rhat = max(split_rhat(chains[:, :, i]) for i in range(m.k))
    if not rhat <= sampler.rhat_max:
        raise SamplingError(
            f"frozen sampler did not mix: split R-hat {rhat:.4f} > {sampler.rhat_max}; "
            "increase burn_in or n_draws")
    nodes = chains.reshape(-1, m.k)
    return FrozenLaw(nodes, np.full(nodes.shape[0], 1.0 / nodes.shape[0]), "monte-carlo",
                     chains, rhat)


def frozen_law(m: TwoScaleModel, x, sampler: FrozenSampler | None = None) -> FrozenLaw:
    """Stationary law of the frozen fast equation at ``x``."""
    sampler = FrozenSampler() if sampler is None else sampler
    p = _closed_form_params(m) if sampler.method != "monte-carlo" else None
    if p is not None:
        return closed_form_law(p, sampler.nodes)
    if sampler.method == "closed-form":
        raise DomainError("fast equation has no closed-form stationary law; use monte-carlo")
    return sampled_law(m, x, sampler)


def _law_is_x_free(m: TwoScaleModel, sampler: FrozenSampler) -> bool:
    if sampler.method != "monte-carlo" and _closed_form_params(m) is not None:
        return True
    fields = [m.fast_drift, m.fast_diffusion] + ([m.fast_jump] if m.fast_jump is not None else [])
    return not any(f.depends_on_x() for f in fields)


# ---------------------------------------------------------------------------
# averaged characteristics


@dataclass(frozen=True)
class AveragedCharacteristics:
    """Averaged drift, diffusion and jump kernels at one slow point.

    Attributes
    ----------
    drift : ndarray, shape (d,)
    diffusion : ndarray, shape (d, d)
        Average of ``sigma sigma^T``.
    small_kernel, large_kernel : JumpKernel
        Images of the small and large slow-jump marks, compensated and
        uncompensated respectively.
    drift_se : ndarray, shape (d,)
        Standard error of ``drift`` (zero for closed-form laws).
    method : str
    """

    drift: np.ndarray
    diffusion: np.ndarray
    small_kernel: JumpKernel
    large_kernel: JumpKernel
    drift_se: np.ndarray = field(default=None)
    method: str = "given"

    def __post_init__(self):
        a = np.asarray(self.drift, dtype=float).reshape(-1)
        d = a.size
        b = np.asarray(self.diffusion, dtype=float).reshape(d, d)
        se = np.zeros(d) if self.drift_se is None else np.asarray(self.drift_se, float).reshape(d)
        object.__setattr__(self, "drift", a)
        object.__setattr__(self, "diffusion", b)
        object.__setattr__(self, "drift_se", se)

    @classmethod
    def simple(cls, drift, diffusion=None, small=None, large=None) -> "AveragedCharacteristics":
        a = np.asarray(drift, dtype=float).reshape(-1)
        d = a.size
        b = np.zeros((d, d)) if diffusion is None else diffusion
        return cls(a, b, small or JumpKernel.empty(d), large or JumpKernel.empty(d))


def _law_average(m: TwoScaleModel, xs: np.ndarray, law: FrozenLaw):
    # averages of a, sigma sigma^T and jump images for a batch of x
    n, d = xs.shape
    Q = law.weights.size
    X = np.repeat(xs, Q, axis=0)
    Y = np.tile(law.nodes, (n, 1))
    Ya = Y if m.k > 1 else Y[:, 0]
    w = law.weights
    a = eval_field(m.slow_drift, X, Ya).reshape(n, Q, d)
    sig = eval_field(m.slow_diffusion, X, Ya).reshape(n, Q, d, d)
    abar = np.einsum("q,nqi->ni", w, a)
    bbar = np.einsum("q,nqij,nqkj->nik", w, sig, sig)
    G = None
    if m.slow_measure is not None:
        G = eval_field(m.slow_jump, X, Ya).reshape(n, Q, d)
    return abar, bbar, G, a


def _kernels(m: TwoScaleModel, G: np.ndarray | None, w: np.ndarray, d: int):
    if G is None:
        return JumpKernel.empty(d), JumpKernel.empty(d)
    (su, sw), (lu, lw) = m.slow_measure.discretize(m.cutoff)
    out = []
    for u, mu in ((su, sw), (lu, lw)):
        amp = (G[:, None, :] * np.asarray(u)[None, :, None]).reshape(-1, d)
        wt = (w[:, None] * np.asarray(mu)[None, :]).reshape(-1)
        out.append(JumpKernel(amp, wt).compress())
    return out[0], out[1]


def averaged_characteristics(m: TwoScaleModel, x, sampler: FrozenSampler | None = None
                             ) -> AveragedCharacteristics:
    """Average the slow characteristics over the frozen stationary law at ``x``.

    Parameters
    ----------
    m : TwoScaleModel
    x : array_like
        Slow point.
    sampler : FrozenSampler, optional

    Returns
    -------
    AveragedCharacteristics
        Drift standard errors come from the spread of per-chain means for
        sampled laws.

    Raises
    ------
    SamplingError
        If the frozen sampler fails the split-chain diagnostic.
    """
    x = np.asarray(x, dtype=float).reshape(1, m.d)
    law = frozen_law(m, x[0], sampler)
    abar, bbar, G, a = _law_average(m, x, law)
    se = np.zeros(m.d)
    if law.chains is not None:
        nc = law.chains.shape[0]
        per_chain = a[0].reshape(nc, -1, m.d).mean(axis=1)
        se = per_chain.std(axis=0, ddof=1) / np.sqrt(nc)
    small, large = _kernels(m, None if G is None else G[0], law.weights, m.d)
    return AveragedCharacteristics(abar[0], bbar[0], small, large, se, law.method)


# ---------------------------------------------------------------------------
# generator


def _jump_terms(f: BumpPolynomial, xs, fx, gx, kern: JumpKernel, compensate: bool):
    if not kern.weights.size:
        return np.zeros(xs.shape[0])
    out = np.zeros(xs.shape[0])
    for v, w in zip(kern.amplitudes, kern.weights):
        term = f.value(xs + v) - fx
        if compensate:
            term -= gx @ v
        out += w * term
    return out


def generator_apply(f: BumpPolynomial, x, avg: AveragedCharacteristics) -> np.ndarray | float:
    """Apply the averaged generator to a test function.

    Parameters
    ----------
    f : BumpPolynomial
        Test function with analytic gradient and Hessian.
    x : array_like
        One point ``(d,)`` or a batch ``(n, d)``.
    avg : AveragedCharacteristics

    Returns
    -------
    float or ndarray
        ``L f(x)``; a float for a single point.
    """
    xa = np.asarray(x, dtype=float)
    single = xa.ndim <= 1
    xs = xa.reshape(-1, f.d)
    fx, gx, hx = f.value(xs), f.grad(xs), f.hess(xs)
    out = gx @ avg.drift + 0.5 * np.einsum("nij,ij->n", hx, avg.diffusion)
    out += _jump_terms(f, xs, fx, gx, avg.small_kernel, True)
    out += _jump_terms(f, xs, fx, gx, avg.large_kernel, False)
    return float(out[0]) if single else out


class AveragedGenerator:
    """Vectorized averaged generator for a two-scale model.

    When the frozen law does not depend on the slow state it is computed
    once and the averages are evaluated for whole batches of points.
    Otherwise the law is recomputed per distinct point and cached.

    Parameters
    ----------
    m : TwoScaleModel
    sampler : FrozenSampler, optional
    drift_override : callable, optional
        Replace the averaged drift by ``drift_override(xs) -> (n, d)``; used
        for negative controls.
    """

    def __init__(self, m: TwoScaleModel, sampler: FrozenSampler | None = None,
                 drift_override: Callable | None = None):
        self.m = m
        self.sampler = FrozenSampler() if sampler is None else sampler
        self.drift_override = drift_override
        self._x_free = _law_is_x_free(m, self.sampler)
        self._law = frozen_law(m, m.x0, self.sampler) if self._x_free else None
        self._cache: dict[tuple, FrozenLaw] = {}
        slow = [m.slow_drift, m.slow_diffusion] + ([m.slow_jump] if m.slow_jump is not None else [])
        self._const = None
        if self._x_free and not any(f.depends_on_x() for f in slow):
            # averages do not depend on x: compute them once
            abar, bbar, G, _ = _law_average(m, np.asarray(m.x0).reshape(1, -1), self._law)
            groups = None if G is None else _group_nodes(G[0], self._law.weights)
            self._const = (abar[0], bbar[0], groups)

    @property
    def law(self) -> FrozenLaw | None:
        return self._law

    def _law_at(self, x) -> FrozenLaw:
        if self._x_free:
            return self._law
        key = tuple(np.round(np.ravel(x), 12))
        if key not in self._cache:
            self._cache[key] = frozen_law(self.m, np.asarray(key), self.sampler)
        return self._cache[key]

    def characteristics(self, x) -> AveragedCharacteristics:
        x = np.asarray(x, dtype=float).reshape(1, self.m.d)
        law = self._law_at(x[0])
        abar, bbar, G, _ = _law_average(self.m, x, law)
        if self.drift_override is not None:
            abar = np.asarray(self.drift_override(x), dtype=float).reshape(1, self.m.d)
        small, large = _kernels(self.m, None if G is None else G[0], law.weights, self.m.d)
        return AveragedCharacteristics(abar[0], bbar[0], small, large, None, law.method)

    def apply(self, funcs, xs) -> np.ndarray:
        """``L f(x)`` for every function in ``funcs`` and point in ``xs``.

        Returns
        -------
        ndarray, shape (len(funcs), n)
        """
        xs = np.asarray(xs, dtype=float).reshape(-1, self.m.d)
        funcs = list(funcs)
        if not self._x_free:
            out = np.empty((len(funcs), xs.shape[0]))
            for i, x in enumerate(xs):
                ch = self.characteristics(x)
                for j, f in enumerate(funcs):
                    out[j, i] = generator_apply(f, x, ch)
            return out
        law = self._law
        n = xs.shape[0]
        if self._const is not None:
            a0, b0, groups = self._const
            abar = np.broadcast_to(a0, xs.shape)
            bbar = np.broadcast_to(b0, (n,) + b0.shape)
            G = None
        else:
            abar, bbar, G, _ = _law_average(self.m, xs, law)
            groups = None
        if self.drift_override is not None:
            abar = np.asarray(self.drift_override(xs), dtype=float).reshape(xs.shape)
        out = np.empty((len(funcs), n))
        jumps = None
        if self.m.slow_measure is not None:
            (su, sw), (lu, lw) = self.m.slow_measure.discretize(self.m.cutoff)
            jumps = [(np.asarray(su), np.asarray(sw), True), (np.asarray(lu), np.asarray(lw), False)]
        for j, f in enumerate(funcs):
            fx, gx, hx = f.value(xs), f.grad(xs), f.hess(xs)
            val = np.einsum("ni,ni->n", gx, abar) + 0.5 * np.einsum("nij,nij->n", hx, bbar)
            if jumps is not None:
                val += self._jumps_batch(f, xs, fx, gx, G, law.weights, jumps, groups)
            out[j] = val
        return out

    @staticmethod
    def _jumps_batch(f, xs, fx, gx, G, w, jumps, groups=None):
        # G: (n, Q, d) jump amplitudes per frozen node, or None with precomputed groups
        n = xs.shape[0]
        total = np.zeros(n)
        if groups is None:
            Q = G.shape[1]
            flatG = G.reshape(n, -1)
            # merge nodes with identical amplitudes, common for piecewise-constant G
            if n == 1 or np.all(flatG == flatG[:1]):
                groups = _group_nodes(G[0], w)
        for u, mu, comp in jumps:
            if not u.size:
                continue
            if groups is not None:
                for amp, wt in groups:
                    for uu, mm in zip(u, mu):
                        v = amp * uu
                        term = f.value(xs + v) - fx
                        if comp:
                            term -= gx @ v
                        total += wt * mm * term
            else:
                for q in range(Q):
                    for uu, mm in zip(u, mu):
                        v = G[:, q] * uu
                        term = f.value(xs + v) - fx
                        if comp:
                            term -= np.einsum("ni,ni->n", gx, v)
                        total += w[q] * mm * term
        return total


def _group_nodes(G0: np.ndarray, w: np.ndarray):
    key = np.round(G0, 12)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    ws = np.bincount(inv, weights=w, minlength=uniq.shape[0])
    return [(uniq[i], ws[i]) for i in range(uniq.shape[0])]
