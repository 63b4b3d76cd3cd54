"""Deterministic solvers: extremal solutions, averaged ODE, forced equations.

The extremal solutions leave the hyperplane immediately upward or
downward. They are computed in the power-transformed fast coordinate
``u = |y|**(1-gamma)``, where the system ``u' = (1-gamma) rate``,
``x' = drift`` is locally Lipschitz, and mapped back with
``y = sign * u**(1/(1-gamma))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .coeffs import SmallNoiseModel
from .errors import DomainError, IntegrationError, StabilityError

__all__ = [
    "rk4_solve",
    "DensePath",
    "ExtremalSolution",
    "extremal_solution",
    "averaged_ode_solve",
    "ForcedResult",
    "forced_solution",
    "forward_transform",
    "inverse_transform",
]


def _grid(T: float, h: float) -> np.ndarray:
    if not (h > 0 and np.isfinite(h)):
        raise DomainError("step h must be positive")
    if not (T >= 0 and np.isfinite(T)):
        raise DomainError("horizon T must be non-negative")
    N = max(1, int(np.ceil(T / h - 1e-12))) if T > 0 else 0
    return np.linspace(0.0, T, N + 1) if N else np.zeros(1)


def rk4_solve(f: Callable, z0, times: np.ndarray):
    """Classical fourth-order Runge-Kutta on a given grid.

    Parameters
    ----------
    f : callable
        ``f(t, z) -> dz/dt`` for a 1-D state ``z``.
    z0 : array_like
    times : ndarray
        Increasing grid starting at the initial time.

    Returns
    -------
    Z : ndarray, shape (len(times), len(z0))
    F : ndarray
        ``f`` at every grid node, for Hermite dense output.
    """
    z = np.array(z0, dtype=float).reshape(-1)
    Z = np.empty((times.size, z.size))
    F = np.empty_like(Z)
    Z[0] = z
    F[0] = f(times[0], z)
    for i in range(times.size - 1):
        t, h = times[i], times[i + 1] - times[i]
        k1 = F[i]
        k2 = f(t + h / 2, z + h / 2 * k1)
        k3 = f(t + h / 2, z + h / 2 * k2)
        k4 = f(t + h, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise IntegrationError(f"non-finite ODE state at t={times[i + 1]:.6g}",
                                   t=float(t), state={"z": Z[i].tolist()})
        Z[i + 1] = z
        F[i + 1] = f(times[i + 1], z)
    return Z, F


@dataclass
class DensePath:
    """Grid solution with cubic Hermite dense output."""

    times: np.ndarray
    xs: np.ndarray
    dxs: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.times.size == 1:
            return np.broadcast_to(self.xs[0], t.shape + self.xs.shape[1:]).copy()
        spline = self.__dict__.get("_spline")
        if spline is None:
            spline = CubicHermiteSpline(self.times, self.xs, self.dxs, axis=0)
            self.__dict__["_spline"] = spline
        return spline(t)


def forward_transform(y, gamma: float):
    """``|y|**(1-gamma)`` (the sign is carried separately)."""
    return np.abs(np.asarray(y, dtype=float)) ** (1.0 - gamma)


def inverse_transform(u, gamma: float, sign: int):
    """``sign * max(u, 0)**(1/(1-gamma))``."""
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    return sign * u ** (1.0 / (1.0 - gamma))


@dataclass
class ExtremalSolution:
    """Extremal solution leaving the hyperplane on one side.

    Attributes
    ----------
    sign : int
        +1 (upward) or -1 (downward).
    times, xs, ys : ndarray
        Grid values; ``ys = sign * u**(1/(1-gamma))``.
    u : ndarray
        Transformed fast coordinate on the grid.
    gamma : float
    """

    sign: int
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    u: np.ndarray
    gamma: float
    _dense: DensePath

    def state_at(self, t):
        """Dense ``(x, y)`` at times ``t`` (fourth order in ``u``)."""
        z = self._dense(t)
        x = z[..., :-1]
        y = inverse_transform(z[..., -1], self.gamma, self.sign)
        return x, y

    def x_at(self, t):
        return self.state_at(t)[0]

    def y_at(self, t):
        return self.state_at(t)[1]


def _branches(m: SmallNoiseModel, sign: int):
    if sign == 1:
        return m.drift.plus, m.rate.plus
    if sign == -1:
        return m.drift.minus, m.rate.minus
    raise DomainError("sign must be +1 or -1")


def _transformed_rhs(m: SmallNoiseModel, sign: int):
    drift, rate = _branches(m, sign)
    g = m.gamma
    d = m.d

    def f(t, z):
        x = z[:d].reshape(1, d)
        y = inverse_transform(z[d:], g, sign)
        out = np.empty(d + 1)
        out[:d] = drift(x, y)[0]
        out[d] = (1.0 - g) * rate(x, y)[0]
        return out

    return f


def extremal_solution(m: SmallNoiseModel, sign: int, T: float, h: float,
                      x0=None, y0: float = 0.0) -> ExtremalSolution:
    """Extremal solution of the noiseless system on ``[0, T]``.

    Solves ``u' = (1-g) rate^sign(x, y)``, ``x' = drift^sign(x, y)`` with
    ``y = sign * u^(1/(1-g))`` by RK4 on step ``h``. Started at ``y0 = 0``
    the first step reproduces the local expansion
    ``y(h) ~ sign ((1-g) rate^sign(x0, 0) h)^(1/(1-g))``.

    Parameters
    ----------
    m : SmallNoiseModel
    sign : {+1, -1}
    T, h : float
    x0 : array_like, optional
        Start point, default ``m.x0``.
    y0 : float
        Start on the hyperplane (0) or on the ``sign`` side of it.

    Raises
    ------
    DomainError
        If the branch rate at the start is not positive (the solution would
        not leave the hyperplane on that side) or ``y0`` lies on the wrong
        side.
    """
    sign = int(sign)
    _, rate = _branches(m, sign)
    x0 = np.asarray(m.x0 if x0 is None else x0, dtype=float).reshape(m.d)
    if y0 * sign < 0:
        raise DomainError("start y0 lies on the opposite side of the requested branch")
    r0 = float(rate(x0.reshape(1, -1), np.array([float(y0)]))[0])
    if y0 == 0 and not r0 > 0:
        raise DomainError(
            f"branch {'+' if sign > 0 else '-'} has rate {r0} at the start; an extremal "
            "solution leaving the hyperplane needs a positive rate (repulsive regime)")
    times = _grid(T, h)
    z0 = np.concatenate([x0, [forward_transform(y0, m.gamma)]])
    Z, F = rk4_solve(_transformed_rhs(m, sign), z0, times)
    if np.any(Z[1:, -1] <= 0) and y0 == 0:
        raise IntegrationError("transformed coordinate returned to the hyperplane")
    ys = inverse_transform(Z[:, -1], m.gamma, sign)
    return ExtremalSolution(sign, times, Z[:, :-1], ys, Z[:, -1], m.gamma,
                            DensePath(times, Z, F))


def averaged_ode_solve(psibar: Callable, x0, T: float, h: float) -> DensePath:
    """RK4 solution of ``x' = psibar(x)`` with Hermite dense output.

    Parameters
    ----------
    psibar : callable
        Averaged drift, ``psibar(x) -> array of shape (d,)``.
    x0 : array_like
    T, h : float
    """
    times = _grid(T, h)

    def f(t, z):
        v = np.asarray(psibar(z), dtype=float).reshape(z.shape)
        if not np.all(np.isfinite(v)):
            raise IntegrationError(f"non-finite averaged drift at x={z.tolist()}", t=float(t),
                                   state={"x": z.tolist()})
        return v

    Z, F = rk4_solve(f, x0, times)
    return DensePath(times, Z, F)


@dataclass
class ForcedResult:
    """Fixed point of the forced integral system and its distance to the unforced one.

    Attributes
    ----------
    times, xs, ys : ndarray
        Forced solution on the grid.
    distance : float
        ``sup_t (|x_f - x| + |y_f - y|)`` against the unforced fixed point.
    sweeps : int
        Fixed-point sweeps used for the forced system.
    converged : bool
        False if the sweep limit was hit before the stopping tolerance.
    """

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    distance: float
    sweeps: int
    converged: bool


def _cumtrapz(F: np.ndarray, times: np.ndarray) -> np.ndarray:
    h = np.diff(times)[:, None]
    inc = 0.5 * h * (F[1:] + F[:-1])
    return np.concatenate([np.zeros((1, F.shape[1])), np.cumsum(inc, axis=0)])


def _picard(m, sign, x, y, fx, fy, times, tol, max_sweeps):
    drift, rate = _branches(m, sign)
    g, d = m.gamma, m.d
    X = np.tile(x, (times.size, 1)) + fx
    Y = np.full(times.size, y) + fy
    prev = None
    for sweep in range(1, max_sweeps + 1):
        if np.any(Y * sign <= 0):
            i = int(np.flatnonzero(Y * sign <= 0)[0])
            raise StabilityError(
                f"fast coordinate reached the hyperplane at t={times[i]:.6g}; forcing too large")
        F = np.empty((times.size, d + 1))
        F[:, :d] = drift(X, Y)
        F[:, d] = rate(X, Y) * np.sign(Y) * np.abs(Y) ** g
        I = _cumtrapz(F, times)
        Xn = x + I[:, :d] + fx
        Yn = y + I[:, d] + fy
        if not (np.all(np.isfinite(Xn)) and np.all(np.isfinite(Yn))):
            raise StabilityError("fixed-point iterate is not finite")
        change = np.max(np.abs(Xn - X).sum(axis=1) + np.abs(Yn - Y))
        X, Y = Xn, Yn
        if prev is not None and abs(change - prev) < tol:
            return X, Y, sweep, True
        if change < tol:
            return X, Y, sweep, True
        prev = change
    return X, Y, max_sweeps, False


def forced_solution(
    m: SmallNoiseModel,
    sign: int,
    x,
    y: float,
    f: tuple[Callable, Callable] | None,
    T: float,
    h: float,
    *,
    tol: float = 1e-10,
    max_sweeps: int = 200,
) -> ForcedResult:
    """Solve the forced integral system by fixed-point iteration.

    ``X(t) = x + int_0^t drift^sign(X, Y) ds + f_X(t)`` and
    ``Y(t) = y + int_0^t rate^sign(X, Y) signed_pow(Y, g) ds + f_Y(t)``
    on the grid of step ``h`` with trapezoidal integrals. The forcing is
    purely additive, so a constant ``f_Y = a`` acts like a shifted start.
    The unforced system is solved with the same scheme, so ``f = 0``
    gives distance 0.

    Parameters
    ----------
    m : SmallNoiseModel
    sign : {+1, -1}
        Branch; must match the side of ``y``.
    x : array_like
    y : float
        Non-zero start of the fast coordinate.
    f : (callable, callable) or None
        Forcing pair ``(f_X(t) -> (d,), f_Y(t) -> float)``, vectorized in
        ``t``. ``None`` means no forcing.
    T, h : float
    tol : float
        Stop when successive sweep changes differ by less than ``tol``.
    max_sweeps : int

    Raises
    ------
    DomainError
        If ``y == 0`` or its side does not match ``sign``.
    StabilityError
        If an iterate of the fast coordinate reaches the hyperplane.
    """
    sign = int(sign)
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    if y == 0 or np.sign(y) != sign:
        raise DomainError("forced system needs y != 0 on the side given by sign")
    x = np.asarray(x, dtype=float).reshape(m.d)
    times = _grid(T, h)
    zero_x = np.zeros((times.size, m.d))
    zero_y = np.zeros(times.size)
    if f is None:
        fx, fy = zero_x, zero_y
    else:
        fx = np.asarray(f[0](times), dtype=float).reshape(times.size, m.d)
        fy = np.asarray(f[1](times), dtype=float).reshape(times.size)
    X0, Y0, _, _ = _picard(m, sign, x, y, zero_x, zero_y, times, tol, max_sweeps)
    if f is None:
        X, Y, sweeps, ok = X0, Y0, 0, True
    else:
        X, Y, sweeps, ok = _picard(m, sign, x, y, fx, fy, times, tol, max_sweeps)
    dist = float(np.max(np.abs(X - X0).sum(axis=1) + np.abs(Y - Y0)))
    return ForcedResult(times, X, Y, dist, sweeps, ok)
