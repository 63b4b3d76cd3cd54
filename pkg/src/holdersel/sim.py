"""Seeded Euler-Maruyama integrators.

Three systems are covered:

* the small-noise system with a signed-power fast drift
  (:func:`simulate_small_noise`, batch form :func:`integrate_small_noise`);
* the frozen fast equation with the slow state held fixed
  (:func:`simulate_frozen`, batch form :func:`integrate_frozen`);
* the slow-fast jump-diffusion (:func:`simulate_two_scale`, batch form
  :func:`integrate_two_scale`).

Batch integrators advance many paths in lockstep. Every path draws from its
own seeded stream (see :mod:`holdersel.seeding`), so any partition of a seed
range gives bit-identical per-path results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coeffs import SmallNoiseModel, TwoScaleModel, check_exponent, eval_field, signed_pow
from .errors import DomainError, IntegrationError, ResourceError
from .seeding import NormalBuffer, check_seed, path_streams

__all__ = [
    "StepPolicy",
    "PathSample",
    "BatchResult",
    "FrozenResult",
    "integrate_small_noise",
    "simulate_small_noise",
    "integrate_frozen",
    "simulate_frozen",
    "integrate_two_scale",
    "simulate_two_scale",
]

POLICY_KINDS = ("two-level", "graded", "uniform")


@dataclass(frozen=True)
class StepPolicy:
    """Local step rule for the small-noise system.

    Parameters
    ----------
    base_dt : float
        Step used away from the hyperplane ``y = 0``.
    kind : {"two-level", "graded", "uniform"}
        ``two-level`` uses ``base_dt`` outside the boundary layer
        ``|y| <= eps**(2/(gamma+1))`` and ``base_dt * refine`` inside it,
        with ``refine = max(eps**(2(1-gamma)/(gamma+1)), floor)``.
        ``graded`` uses ``base_dt * clip(|y|**(1-gamma), refine, 1)``, which
        follows the local time scale of ``y' = c y**gamma`` and equals the
        two-level step inside the layer. ``uniform`` always uses ``base_dt``.
    floor : float
        Lower cap on the refinement factor.

    Notes
    -----
    With ``eps = 0`` there is no boundary layer and every kind reduces to
    ``base_dt``.
    """

    base_dt: float
    kind: str = "two-level"
    floor: float = 1e-4

    def __post_init__(self):
        if not (self.base_dt > 0 and np.isfinite(self.base_dt)):
            raise DomainError("base_dt must be positive and finite")
        if self.kind not in POLICY_KINDS:
            raise DomainError(f"step policy kind must be one of {POLICY_KINDS}")
        if not 0 < self.floor <= 1:
            raise DomainError("refinement floor must lie in (0, 1]")

    @staticmethod
    def layer_width(eps: float, gamma: float) -> float:
        return eps ** (2.0 / (gamma + 1.0))

    @staticmethod
    def fast_factor(eps: float, gamma: float) -> float:
        return eps ** (2.0 * (1.0 - gamma) / (gamma + 1.0))

    def refine(self, eps: float, gamma: float) -> float:
        return max(self.fast_factor(eps, gamma), self.floor)

    def local_dt(self, abs_y, eps: float, gamma: float) -> np.ndarray:
        abs_y = np.asarray(abs_y, dtype=float)
        if self.kind == "uniform" or eps == 0:
            return np.full(abs_y.shape, self.base_dt)
        r = self.refine(eps, gamma)
        if self.kind == "two-level":
            inside = abs_y <= self.layer_width(eps, gamma)
            return np.where(inside, self.base_dt * r, self.base_dt)
        return self.base_dt * np.clip(abs_y ** (1.0 - gamma), r, 1.0)

    def tag(self) -> str:
        return f"{self.kind}:{self.base_dt:g}"


@dataclass
class PathSample:
    """One simulated path on its own time grid.

    ``times[0] == 0``, the grid is strictly increasing, and ``xs``/``ys``
    have one row per time.
    """

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    seed: int
    dt_policy: str

    def __post_init__(self):
        if self.times.size and self.times[0] != 0:
            raise IntegrationError("path grid must start at 0")
        if np.any(np.diff(self.times) <= 0):
            raise IntegrationError("path grid must be strictly increasing")
        if not (len(self.xs) == len(self.ys) == len(self.times)):
            raise IntegrationError("path arrays have inconsistent lengths")

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Column names and a 2-D table ``(t, x_1..x_d, y...)``."""
        xs = self.xs.reshape(len(self.times), -1)
        ys = self.ys.reshape(len(self.times), -1)
        names = ["t"] + [f"x_{i + 1}" for i in range(xs.shape[1])]
        names += ["y"] if ys.shape[1] == 1 else [f"y_{i + 1}" for i in range(ys.shape[1])]
        return names, np.column_stack([self.times, xs, ys])


@dataclass
class BatchResult:
    """Final states and optional records of a lockstep batch.

    Attributes
    ----------
    seeds : ndarray
    t_end, x_end, y_end : ndarray
        State at the end of each path (horizon or exit).
    exit_time : ndarray
        First time ``|y| >= exit_level``; NaN if never reached.
    exit_side : ndarray of int8
        +1 or -1 at exit, 0 if never reached.
    steps : ndarray of int
        Accepted steps per path.
    cp_x, cp_y : ndarray or None
        States at the requested checkpoints, shape ``(n, C, d)``/``(n, C)``.
        NaN for checkpoints after an early stop.
    paths : list of PathSample or None
    """

    seeds: np.ndarray
    t_end: np.ndarray
    x_end: np.ndarray
    y_end: np.ndarray
    exit_time: np.ndarray
    exit_side: np.ndarray
    steps: np.ndarray
    cp_x: np.ndarray | None = None
    cp_y: np.ndarray | None = None
    paths: list | None = None


class _Recorder:
    def __init__(self, n):
        self.chunks = []
        self.n = n

    def add(self, ids, t, x, y):
        self.chunks.append((ids.copy(), t.copy(), x.copy(), y.copy()))

    def build(self, seeds, tag) -> list:
        ids = np.concatenate([c[0] for c in self.chunks])
        t = np.concatenate([c[1] for c in self.chunks])
        x = np.concatenate([c[2] for c in self.chunks])
        y = np.concatenate([c[3] for c in self.chunks])
        order = np.argsort(ids, kind="stable")
        ids, t, x, y = ids[order], t[order], x[order], y[order]
        bounds = np.searchsorted(ids, np.arange(self.n + 1))
        return [
            PathSample(t[a:b], x[a:b], y[a:b], int(seeds[i]), tag)
            for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
        ]


def _nonfinite_guard(bad, t, x, y, seeds, ids):
    i = int(np.flatnonzero(bad)[0])
    raise IntegrationError(
        f"non-finite state after t={t[i]:.6g} on path seed {int(seeds[ids[i]])}",
        t=float(t[i]),
        state={"x": x[i].tolist(), "y": np.ravel(y[i]).tolist(), "seed": int(seeds[ids[i]])},
    )


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    # per-row product, summed over the short last axis
    return (m * v[:, None, :]).sum(axis=-1)


def integrate_small_noise(
    m: SmallNoiseModel,
    eps: float,
    T: float,
    policy: StepPolicy,
    seeds,
    *,
    y0: float = 0.0,
    x0=None,
    corr: float | None = None,
    exit_level: float | None = None,
    stop_on_exit: bool = True,
    exit_stop_time: float = 0.0,
    checkpoints=None,
    observer: Callable | None = None,
    record: bool = False,
    noise=None,
) -> BatchResult:
    """Euler-Maruyama for a batch of small-noise paths.

    Each path takes its own local step from ``policy`` and lands exactly on
    ``T`` and on every checkpoint.

    Parameters
    ----------
    m : SmallNoiseModel
    eps : float
        Noise intensity, ``eps >= 0``.
    T : float
        Horizon.
    policy : StepPolicy
    seeds : array_like of int
        One seed per path.
    y0 : float
        Initial fast state (0 for the standard problem).
    x0 : array_like, optional
        Initial slow state, defaults to ``m.x0``.
    corr : float, optional
        Correlation of the first slow driver with the fast driver; defaults
        to ``m.noise_corr``.
    exit_level : float, optional
        Record the first time ``|y| >= exit_level`` and its side.
    stop_on_exit : bool
        Stop a path at its exit time.
    exit_stop_time : float
        With ``stop_on_exit``, an exited path keeps running until this
        time; used to follow paths over a fixed window while still
        recording their exit side.
    checkpoints : array_like, optional
        Increasing times in ``[0, T]`` at which to store the state.
    observer : callable, optional
        Called as ``observer(ids, t, x, y)`` on the initial state and after
        every step with the indices and states of the paths still running.
    record : bool
        Keep every accepted state and return :class:`PathSample` objects.
    noise : object, optional
        Source of standard normals with a ``next(ids)`` method returning one
        row of ``d + 1`` values per running path. Defaults to the per-seed
        streams; an explicit source lets callers couple runs on different
        grids.

    Raises
    ------
    IntegrationError
        If a state becomes non-finite; the error carries the last finite
        state, its time and the seed.
    """
    if not (eps >= 0 and np.isfinite(eps)):
        raise DomainError("eps must be finite and non-negative")
    if not (T >= 0 and np.isfinite(T)):
        raise DomainError("horizon T must be finite and non-negative")
    gamma = check_exponent(m.gamma)
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    n, d = seeds.size, m.d
    rho = m.noise_corr if corr is None else float(corr)
    if not -1 <= rho <= 1:
        raise DomainError("driver correlation must lie in [-1, 1]")
    rho_c = np.sqrt(1.0 - rho * rho)
    x = np.tile(np.asarray(m.x0 if x0 is None else x0, dtype=float).reshape(1, d), (n, 1))
    y = np.full(n, float(y0))
    t = np.zeros(n)

    cps = None if checkpoints is None else np.asarray(checkpoints, dtype=float).reshape(-1)
    C = 0 if cps is None else cps.size
    if C and (np.any(np.diff(cps) <= 0) or cps[0] < 0 or cps[-1] > T):
        raise DomainError("checkpoints must be increasing and inside [0, T]")
    cp_x = np.full((n, C, d), np.nan) if C else None
    cp_y = np.full((n, C), np.nan) if C else None
    cpi = np.zeros(n, dtype=np.int64)
    if C:
        at0 = cps[0] == 0.0
        if at0:
            cp_x[:, 0] = x
            cp_y[:, 0] = y
            cpi[:] = 1

    exit_time = np.full(n, np.nan)
    exit_side = np.zeros(n, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    t_end, x_end, y_end = t.copy(), x.copy(), y.copy()
    rec = _Recorder(n) if record else None

    ids = np.arange(n)
    if exit_level is not None:
        hit = np.abs(y) >= exit_level
        exit_time[hit] = 0.0
        exit_side[hit] = np.where(y[hit] >= 0, 1, -1)
        if stop_on_exit and exit_stop_time <= 0:
            ids = ids[~hit]
    if rec is not None:
        rec.add(np.arange(n), t, x, y)
    if observer is not None:
        observer(np.arange(n), t, x, y)
    if T == 0:
        ids = ids[:0]

    xa, ya, ta = x[ids], y[ids], t[ids]
    cpa = cpi[ids]
    stepa = np.zeros(ids.size, dtype=np.int64)
    buf = noise if noise is not None else NormalBuffer(seeds, d + 1) if ids.size else None
    sq_eps = eps
    while ids.size:
        dt = policy.local_dt(np.abs(ya), eps, gamma)
        if C:
            nxt = np.where(cpa < C, cps[np.minimum(cpa, C - 1)], T)
            target = np.minimum(nxt, T)
        else:
            target = np.full(ids.size, T)
        rem = target - ta
        # a step whose end rounds onto the target lands on it
        land = (dt >= rem) | (ta + dt >= target)
        dt = np.where(land, rem, dt)
        z = buf.next(ids)
        drift = eval_field(m.drift, xa, ya)
        rate = eval_field(m.rate, xa, ya)
        sq = np.sqrt(dt)
        xn = xa + drift * dt[:, None]
        yn = ya + rate * signed_pow(ya, gamma) * dt
        if sq_eps > 0:
            dB = z[:, :d] * sq[:, None]
            dW = (rho * z[:, 0] + rho_c * z[:, d]) * sq
            xn += sq_eps * _matvec(eval_field(m.slow_noise, xa, ya), dB)
            yn += sq_eps * eval_field(m.fast_noise, xa, ya) * dW
        bad = ~(np.isfinite(xn).all(axis=1) & np.isfinite(yn))
        if bad.any():
            _nonfinite_guard(bad, ta, xa, ya, seeds, ids)
        ta = np.where(land, target, ta + dt)
        xa, ya = xn, yn
        stepa += 1
        if C:
            hitc = land & (cpa < C) & (ta == np.where(cpa < C, cps[np.minimum(cpa, C - 1)], -1))
            if hitc.any():
                rows = ids[hitc]
                cp_x[rows, cpa[hitc]] = xa[hitc]
                cp_y[rows, cpa[hitc]] = ya[hitc]
                cpa = cpa + hitc
        if rec is not None:
            rec.add(ids, ta, xa, ya)
        if observer is not None:
            observer(ids, ta, xa, ya)
        done = ta >= T
        if exit_level is not None:
            ex = (np.abs(ya) >= exit_level) & (exit_side[ids] == 0)
            if ex.any():
                exit_time[ids[ex]] = ta[ex]
                exit_side[ids[ex]] = np.where(ya[ex] >= 0, 1, -1)
            if stop_on_exit:
                done |= (exit_side[ids] != 0) & (ta >= exit_stop_time)
        if done.any():
            fin = ids[done]
            t_end[fin], x_end[fin], y_end[fin] = ta[done], xa[done], ya[done]
            steps[fin] = stepa[done]
            keep = ~done
            ids, xa, ya, ta, cpa, stepa = ids[keep], xa[keep], ya[keep], ta[keep], cpa[keep], stepa[keep]

    paths = rec.build(seeds, policy.tag()) if rec is not None else None
    return BatchResult(seeds, t_end, x_end, y_end, exit_time, exit_side, steps,
                       cp_x, cp_y, paths)


def simulate_small_noise(
    m: SmallNoiseModel,
    eps: float,
    T: float,
    policy: StepPolicy,
    seed: int,
    corr: float | None = None,
    *,
    y0: float = 0.0,
) -> PathSample:
    """Simulate one path of the small-noise system and record every step.

    Parameters
    ----------
    m : SmallNoiseModel
    eps : float
        Noise intensity.
    T : float
        Horizon.
    policy : StepPolicy
    seed : int
        Non-negative seed; the same inputs give a bit-identical path.
    corr : float, optional
        Driver correlation override.
    y0 : float
        Initial fast state.

    Returns
    -------
    PathSample
    """
    seed = check_seed(seed)
    res = integrate_small_noise(m, eps, T, policy, [seed], y0=y0, corr=corr, record=True)
    return res.paths[0]


# ---------------------------------------------------------------------------
# frozen fast equation


@dataclass
class FrozenResult:
    """Terminal and checkpoint values of frozen fast paths.

    Attributes
    ----------
    seeds : ndarray
    y_end : ndarray
    cp_y : ndarray or None
        Values at the checkpoint grid indices, shape ``(n, C)``.
    cp_times : ndarray or None
        Grid times actually used for the checkpoints.
    occupation : ndarray or None
        Fraction of steps with ``y > 0`` after the burn-in, per path.
    dt : float
        Step actually used (``T / round(T / dt)``).
    """

    seeds: np.ndarray
    y_end: np.ndarray
    cp_y: np.ndarray | None
    cp_times: np.ndarray | None
    occupation: np.ndarray | None
    dt: float


def _frozen_values(m: SmallNoiseModel, x) -> tuple[float, float, float, float]:
    return m.frozen(x)


def integrate_frozen(
    rates: tuple[float, float],
    noises: tuple[float, float],
    gamma: float,
    y0: float,
    T: float,
    dt: float,
    seeds,
    *,
    checkpoints=None,
    burn_in: float | None = None,
    record: bool = False,
):
    """Euler-Maruyama for the frozen fast equation on a uniform grid.

    The drift is ``(r+ 1{y>0} + r- 1{y<0}) signed_pow(y, gamma)`` and the
    diffusion ``s+ 1{y>=0} + s- 1{y<0}`` in unit fast time.

    Parameters
    ----------
    rates : (float, float)
        ``(r+, r-)``.
    noises : (float, float)
        ``(s+, s-)``.
    gamma : float
    y0 : float
    T, dt : float
        Horizon and nominal step; the step used is ``T / round(T / dt)``.
    seeds : array_like of int
    checkpoints : array_like, optional
        Times rounded to the nearest grid index.
    burn_in : float, optional
        If given, also return the fraction of post-burn-in steps with
        ``y > 0`` (left-point rule).
    record : bool
        Return the full ``(N + 1, n)`` array of states as a third value.
    """
    gamma = check_exponent(gamma)
    if not (dt > 0 and T > 0):
        raise DomainError("frozen simulation needs T > 0 and dt > 0")
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    n = seeds.size
    N = max(1, int(round(T / dt)))
    h = T / N
    sq = np.sqrt(h)
    rp, rm = map(float, rates)
    sp, sm = map(float, noises)
    cp_idx = None
    if checkpoints is not None:
        cp_idx = np.clip(np.rint(np.asarray(checkpoints, float) / h).astype(int), 0, N)
    cp_y = np.empty((n, cp_idx.size)) if cp_idx is not None else None
    b_idx = None if burn_in is None else int(round(burn_in / h))
    if b_idx is not None and b_idx >= N:
        raise DomainError("burn-in must be shorter than the horizon")
    occ = np.zeros(n) if b_idx is not None else None
    y = np.full(n, float(y0))
    hist = [y.copy()] if record else None
    if cp_idx is not None:
        for c in np.flatnonzero(cp_idx == 0):
            cp_y[:, c] = y
    buf = NormalBuffer(seeds, 1)
    for j in range(N):
        if occ is not None and j >= b_idx:
            occ += y > 0
        z = buf.next(None)[:, 0]
        pos = y > 0
        rate = np.where(pos, rp, np.where(y < 0, rm, 0.0))
        noise = np.where(y >= 0, sp, sm)
        y = y + rate * signed_pow(y, gamma) * h + noise * sq * z
        if not np.all(np.isfinite(y)):
            bad = ~np.isfinite(y)
            raise IntegrationError(
                f"non-finite frozen state at t={j * h:.6g}", t=j * h,
                state={"seed": int(seeds[np.flatnonzero(bad)[0]])})
        if record:
            hist.append(y.copy())
        if cp_idx is not None:
            for c in np.flatnonzero(cp_idx == j + 1):
                cp_y[:, c] = y
    if occ is not None:
        occ = occ / (N - b_idx)
    res = FrozenResult(seeds, y, cp_y, None if cp_idx is None else cp_idx * h, occ, h)
    if record:
        return res, np.array(hist)
    return res


def simulate_frozen(x, m: SmallNoiseModel, y0: float, T: float, dt: float, seed: int,
                    *, check_regime: bool = True) -> PathSample:
    """Path of the fast equation with the slow state frozen at ``x``.

    The coefficients are the branch values of ``m.rate`` and
    ``m.fast_noise`` at ``(x, 0)``.

    Raises
    ------
    DomainError
        If ``check_regime`` and either rate at ``(x, 0)`` is not negative.
    """
    seed = check_seed(seed)
    x = np.asarray(x, dtype=float).reshape(m.d)
    rp, rm, sp, sm = _frozen_values(m, x)
    if check_regime and not (rp < 0 and rm < 0):
        raise DomainError(f"frozen equation needs negative rates at x, got ({rp}, {rm})")
    res, hist = integrate_frozen((rp, rm), (sp, sm), m.gamma, y0, T, dt, [seed], record=True)
    times = np.arange(hist.shape[0]) * res.dt
    xs = np.tile(x, (times.size, 1))
    return PathSample(times, xs, hist[:, 0], seed, f"uniform:{res.dt:g}")


# ---------------------------------------------------------------------------
# two-scale jump-diffusion


@dataclass
class TwoScaleResult:
    """Final states, checkpoints and jump counts of two-scale paths."""

    seeds: np.ndarray
    x_end: np.ndarray
    y_end: np.ndarray
    cp_x: np.ndarray | None
    cp_y: np.ndarray | None
    cp_times: np.ndarray | None
    slow_jumps: np.ndarray
    fast_jumps: np.ndarray
    dt: float
    paths: list | None = field(default=None)


def _schedule(gen, rate, T, measure, nmax):
    # jump arrival times and marks on [0, T] for one path
    if measure is None or rate == 0:
        return np.empty(0), np.empty(0)
    count = gen.poisson(rate * T)
    if count > nmax:
        raise ResourceError(
            f"path needs {count} jumps, above the budget {nmax}; use a larger eps or smaller T")
    times = np.sort(gen.random(count) * T)
    marks = measure.sample_marks(gen, count)
    return times, marks


def _pad(rows):
    width = max([r[0].size for r in rows] + [1])
    tt = np.full((len(rows), width + 1), np.inf)
    mm = np.zeros((len(rows), width + 1))
    for i, (a, b) in enumerate(rows):
        tt[i, : a.size] = a
        mm[i, : b.size] = b
    return tt, mm


def integrate_two_scale(
    m: TwoScaleModel,
    eps: float,
    T: float,
    policy: StepPolicy,
    seeds,
    *,
    checkpoints=None,
    observer: Callable | None = None,
    record: bool = False,
    jump_budget: float = 1e6,
) -> TwoScaleResult:
    """Euler-Maruyama with compound-Poisson jumps for the two-scale system.

    The grid is uniform with step ``T / ceil(T / policy.base_dt)``; the
    step must resolve the fast time scale ``eps`` and is the caller's
    choice. Continuous parts use the left-point rule with the fast drift
    scaled by ``1/eps`` and the fast diffusion by ``eps**-0.5``. Jump
    arrival times are drawn exactly per path; a jump inside a step adds
    its amplitude at the pre-step state at the end of that step. The small
    jumps (``|mark| <= cutoff``) are compensated by a continuous drift.

    Parameters
    ----------
    m : TwoScaleModel
    eps : float
        Scale parameter, ``eps > 0``.
    T : float
    policy : StepPolicy
        Only ``base_dt`` is used.
    seeds : array_like of int
    checkpoints : array_like, optional
        Times rounded to the nearest grid index.
    observer : callable, optional
        ``observer(j, t, x, y)`` on the initial state (``j = 0``) and after
        every step ``j = 1..N``.
    record : bool
    jump_budget : float
        Maximum expected number of jumps per path.

    Raises
    ------
    ResourceError
        If the expected jump count per path exceeds ``jump_budget``.
    IntegrationError
        On a non-finite state.
    """
    if not (eps > 0 and np.isfinite(eps)):
        raise DomainError("two-scale simulation needs eps > 0")
    if not (T > 0 and np.isfinite(T)):
        raise DomainError("horizon T must be positive")
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    n, d, k = seeds.size, m.d, m.k
    N = max(1, int(np.ceil(T / policy.base_dt - 1e-9)))
    h = T / N
    sq = np.sqrt(h)
    lam_s = 0.0 if m.slow_measure is None else m.slow_measure.rate
    lam_f = 0.0 if m.fast_measure is None else m.fast_measure.rate / eps
    expected = (lam_s + lam_f) * T
    if expected > jump_budget:
        raise ResourceError(
            f"expected {expected:.3g} jumps per path exceeds the budget {jump_budget:.3g}; "
            "use a larger eps or a smaller T")
    nmax = int(jump_budget * 10 + 100)
    slow_rows, fast_rows = [], []
    for s in seeds:
        jg = path_streams(int(s))[1]
        slow_rows.append(_schedule(jg, lam_s, T, m.slow_measure, nmax))
        fast_rows.append(_schedule(jg, lam_f, T, m.fast_measure, nmax))
    s_t, s_m = _pad(slow_rows)
    f_t, f_m = _pad(fast_rows)
    s_ptr = np.zeros(n, dtype=np.int64)
    f_ptr = np.zeros(n, dtype=np.int64)
    comp_s = 0.0 if m.slow_measure is None else m.slow_measure.truncated_first_moment(m.cutoff)
    comp_f = 0.0 if m.fast_measure is None else m.fast_measure.truncated_first_moment(m.cutoff)

    cp_idx = None
    if checkpoints is not None:
        cp_idx = np.clip(np.rint(np.asarray(checkpoints, float) / h).astype(int), 0, N)
    C = 0 if cp_idx is None else cp_idx.size
    cp_x = np.empty((n, C, d)) if C else None
    cp_y = np.empty((n, C, k)) if C else None

    x = np.tile(np.asarray(m.x0, float), (n, 1))
    y = np.tile(np.asarray(m.y0, float), (n, 1))
    buf = NormalBuffer(seeds, d + k)
    rows = np.arange(n)
    hist = [] if record else None

    def snapshot(j):
        if C:
            for c in np.flatnonzero(cp_idx == j):
                cp_x[:, c] = x
                cp_y[:, c] = y
        if record:
            hist.append((x.copy(), y.copy()))
        if observer is not None:
            observer(j, np.full(n, j * h), x, y)

    res_prev = None
    if m.residual is not None:
        res_prev = np.asarray(m.residual(0.0), dtype=float).reshape(d)
    snapshot(0)
    inv_eps = 1.0 / eps
    for j in range(N):
        z = buf.next(None)
        ya = y if k > 1 else y[:, 0]
        a = eval_field(m.slow_drift, x, ya).reshape(n, d)
        sig = eval_field(m.slow_diffusion, x, ya).reshape(n, d, d)
        A = eval_field(m.fast_drift, x, ya).reshape(n, k)
        Sig = eval_field(m.fast_diffusion, x, ya).reshape(n, k, k)
        dx = a * h + _matvec(sig, z[:, :d] * sq)
        dy = A * (h * inv_eps) + _matvec(Sig, z[:, d:] * sq) * np.sqrt(inv_eps)
        t_next = (j + 1) * h
        if m.slow_measure is not None:
            G = eval_field(m.slow_jump, x, ya).reshape(n, d)
            dx -= G * (comp_s * h)
            while True:
                due = s_t[rows, s_ptr] <= t_next
                if not due.any():
                    break
                dx[due] += G[due] * s_m[rows[due], s_ptr[due]][:, None]
                s_ptr += due
        if m.fast_measure is not None:
            H = eval_field(m.fast_jump, x, ya).reshape(n, k)
            dy -= H * (comp_f * h * inv_eps)
            while True:
                due = f_t[rows, f_ptr] <= t_next
                if not due.any():
                    break
                dy[due] += H[due] * f_m[rows[due], f_ptr[due]][:, None]
                f_ptr += due
        if res_prev is not None:
            res = np.asarray(m.residual(t_next), dtype=float).reshape(d)
            dx += res - res_prev
            res_prev = res
        xn, yn = x + dx, y + dy
        bad = ~(np.isfinite(xn).all(axis=1) & np.isfinite(yn).all(axis=1))
        if bad.any():
            _nonfinite_guard(bad, np.full(n, j * h), x, y, seeds, rows)
        x, y = xn, yn
        snapshot(j + 1)

    paths = None
    if record:
        times = np.arange(N + 1) * h
        X = np.stack([hx for hx, _ in hist], axis=1)
        Y = np.stack([hy for _, hy in hist], axis=1)
        paths = [
            PathSample(times, X[i], Y[i, :, 0] if k == 1 else Y[i], int(seeds[i]), f"uniform:{h:g}")
            for i in range(n)
        ]
    return TwoScaleResult(seeds, x, y, cp_x, cp_y, None if cp_idx is None else cp_idx * h,
                          s_ptr.copy(), f_ptr.copy(), h, paths)


def simulate_two_scale(m: TwoScaleModel, eps: float, T: float, policy: StepPolicy,
                       seed: int) -> PathSample:
    """Simulate and record one path of the two-scale system."""
    seed = check_seed(seed)
    return integrate_two_scale(m, eps, T, policy, [seed], record=True).paths[0]
