"""Monte Carlo harnesses that confront simulation with the closed forms.

Every harness simulates paths with consecutive seeds ``seed0, seed0 + 1,
...`` and reduces them to a :class:`Tally` of per-path values keyed by seed.
Tallies from disjoint seed ranges merge by concatenation and sorting, so a
run split over workers or chunks yields exactly the same tally, and hence
the same summary, as a single run.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import (
    FrozenParams,
    averaged_drift,
    empirical_tv,
    exit_time_bound,
    invariant_density,
    noiseless_exit_time,
    relaxation_time,
    tv_to_masses,
)
from .coeffs import GridSpec, SmallNoiseModel, TwoScaleModel
from .errors import DomainError
from .extremal import averaged_ode_solve, extremal_solution
from .generator import AveragedGenerator, BumpPolynomial, FrozenSampler, test_function_registry
from .seeding import check_seed, seed_range, worker_count
from .sim import StepPolicy, integrate_frozen, integrate_small_noise, integrate_two_scale

__all__ = [
    "Tally",
    "run_tally",
    "SelectionEstimate",
    "ConvergenceLadder",
    "PathwiseSelection",
    "ResidualTable",
    "BranchDrift",
    "run_selection",
    "selection_tally",
    "estimate_from_tally",
    "run_pathwise_selection",
    "run_attraction",
    "run_moment_bound",
    "run_exit_time_scaling",
    "run_frozen_ergodicity",
    "run_martingale_residual",
    "binomial_ci",
    "loglog_slope",
    "bootstrap_floor",
    "selection_time_cap",
]

Z95 = 1.959963984540054
DEFAULT_CHUNK = 25_000


# ---------------------------------------------------------------------------
# tallies and the chunked runner


@dataclass
class Tally:
    """Per-path values keyed by seed.

    Attributes
    ----------
    seeds : ndarray of int64
        Sorted, unique.
    data : dict of str to ndarray
        Arrays whose first axis runs over paths in seed order.
    """

    seeds: np.ndarray
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.seeds, dtype=np.int64).reshape(-1)
        order = np.argsort(s, kind="stable")
        if np.any(np.diff(s[order]) == 0):
            raise DomainError("tally seeds must be unique")
        self.seeds = s[order]
        self.data = {k: np.asarray(v)[order] for k, v in self.data.items()}
        for k, v in self.data.items():
            if v.shape[0] != s.size:
                raise DomainError(f"tally column {k!r} has {v.shape[0]} rows for {s.size} seeds")

    @property
    def n(self) -> int:
        return int(self.seeds.size)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def merge(self, other: "Tally") -> "Tally":
        """Union of two tallies over disjoint seed sets."""
        if set(self.data) != set(other.data):
            raise DomainError("cannot merge tallies with different columns")
        if np.intersect1d(self.seeds, other.seeds).size:
            raise DomainError("cannot merge tallies with overlapping seeds")
        return Tally(np.concatenate([self.seeds, other.seeds]),
                     {k: np.concatenate([self.data[k], other.data[k]]) for k in self.data})

    @staticmethod
    def merge_all(tallies: Sequence["Tally"]) -> "Tally":
        tallies = list(tallies)
        if not tallies:
            raise DomainError("nothing to merge")
        keys = set(tallies[0].data)
        if any(set(t.data) != keys for t in tallies):
            raise DomainError("cannot merge tallies with different columns")
        out = Tally(np.concatenate([t.seeds for t in tallies]),
                    {k: np.concatenate([t.data[k] for t in tallies]) for k in keys})
        return out

    def equals(self, other: "Tally") -> bool:
        """Exact equality of seeds and every column (NaNs compare equal)."""
        if not np.array_equal(self.seeds, other.seeds) or set(self.data) != set(other.data):
            return False
        return all(np.array_equal(self.data[k], other.data[k], equal_nan=True) for k in self.data)


def _call(args):
    fn, seeds, kw = args
    return fn(seeds, **kw)


def run_tally(fn: Callable, seeds, *, workers: int | None = None,
              chunk: int | None = None, **kw) -> Tally:
    """Run ``fn(seed_chunk, **kw) -> Tally`` over chunks of ``seeds`` and merge.

    Parameters
    ----------
    fn : callable
        Picklable (module-level) worker.
    seeds : array_like of int
    workers : int, optional
        Process count; defaults to the ``HOLDERSEL_WORKERS`` variable or 1.
    chunk : int, optional
        Paths per chunk, default 25000 (or an even split over workers).
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    w = worker_count(workers)
    size = chunk or DEFAULT_CHUNK
    if w > 1:
        size = min(size, max(1, -(-seeds.size // w)))
    parts = [seeds[i:i + size] for i in range(0, seeds.size, size)] or [seeds[:0]]
    jobs = [(fn, p, kw) for p in parts]
    if w > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=w) as ex:
            results = list(ex.map(_call, jobs))
    else:
        results = [_call(j) for j in jobs]
    return Tally.merge_all(results)


# ---------------------------------------------------------------------------
# statistics helpers


def binomial_ci(k: int, n: int) -> float:
    """Half-width of the 95% normal-approximation binomial interval."""
    if n <= 0:
        return float("nan")
    p = k / n
    return float(Z95 * np.sqrt(p * (1.0 - p) / n))


def loglog_slope(x, y) -> float | None:
    """Least-squares slope of ``log y`` on ``log x``; ``None`` for fewer than two points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def bootstrap_floor(values: np.ndarray, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap standard deviation of the mean over the first axis.

    ``values`` has shape ``(n, ...)``; the same resamples are used for all
    trailing columns.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    idx = rng.integers(0, n, size=(n_boot, n))
    means = v[idx].mean(axis=1)
    return means.std(axis=0, ddof=1)


def _median_se(v: np.ndarray) -> float:
    # half-width of the order-statistic 95% interval for the median, over 1.96
    s = np.sort(np.asarray(v, dtype=float))
    n = s.size
    if n < 2:
        return float("nan")
    half = Z95 * np.sqrt(n) / 2
    lo = int(np.clip(np.floor(n / 2 - half), 0, n - 1))
    hi = int(np.clip(np.ceil(n / 2 + half), 0, n - 1))
    return float((s[hi] - s[lo]) / (2 * Z95))


def _check_n(n_paths) -> int:
    if int(n_paths) != n_paths or n_paths < 1:
        raise DomainError(f"n_paths must be a positive integer, got {n_paths!r}")
    return int(n_paths)


def _ladder(values, name: str, decreasing: bool = True) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise DomainError(f"{name} ladder is empty")
    if decreasing and np.any(np.diff(v) >= 0):
        raise DomainError(f"{name} ladder must be strictly decreasing")
    if not decreasing and np.any(np.diff(v) <= 0):
        raise DomainError(f"{name} ladder must be strictly increasing")
    return v


@dataclass
class ConvergenceLadder:
    """Per-rung statistics along a parameter ladder.

    Attributes
    ----------
    parameter : str
        Ladder parameter name (``eps``, ``delta`` or ``T``).
    values : ndarray
    stats : dict of str to ndarray
        One value per rung for each statistic.
    errors : dict of str to ndarray
        Standard errors, where available.
    counts : ndarray of int
        Paths used per rung.
    slopes : dict of str to float or None
        Fitted log-log slopes against the ladder parameter.
    extra : dict
        Harness-specific values (bounds, closed-form references).
    """

    parameter: str
    values: np.ndarray
    stats: dict
    errors: dict
    counts: np.ndarray
    slopes: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def decreasing(self, name: str) -> bool:
        """Whether statistic ``name`` strictly decreases along the ladder order."""
        v = np.asarray(self.stats[name], dtype=float)
        return bool(np.all(np.diff(v) < 0))

    def rows(self) -> list[dict]:
        out = []
        for i, val in enumerate(self.values):
            r = {self.parameter: float(val), "n_paths": int(self.counts[i])}
            for k, v in self.stats.items():
                r[k] = float(v[i])
            for k, v in self.errors.items():
                r[f"{k}_se"] = float(v[i])
            for k, v in self.slopes.items():
                r[f"slope_{k}"] = "" if v is None else float(v)
            out.append(r)
        return out


# ---------------------------------------------------------------------------
# selection


def selection_time_cap(m: SmallNoiseModel, delta: float) -> float:
    """``100 * delta**(1-g) / ((1-g) * min rate)`` at the start point."""
    rp, rm, _, _ = m.frozen()
    return 100.0 * noiseless_exit_time(delta, min(rp, rm), m.gamma)


def _check_local_signs(m: SmallNoiseModel, delta: float, sign: int, radius: float | None = None):
    r = delta if radius is None else radius
    grid = GridSpec(points=9, center=m.x0, radius=r)
    xs = grid.slow_points(m.d)
    ys = np.linspace(-delta, delta, 9)
    X = np.repeat(xs, ys.size, axis=0)
    Y = np.tile(ys, xs.shape[0])
    v = sign * m.rate(X, Y)
    if not np.all(v > 0):
        i = int(np.argmin(v))
        raise DomainError(
            f"rate changes sign near the start point at x={X[i].tolist()}, y={Y[i]:.4g}; "
            "use a smaller delta")


@dataclass
class SelectionEstimate:
    """Exit-side frequencies and exit-time statistics.

    ``p_plus_hat + p_minus_hat = 1`` over the paths that exited; capped
    paths are counted separately in ``n_capped``.
    """

    n_paths: int
    p_plus_hat: float
    p_minus_hat: float
    ci_halfwidth: float
    mean_exit_time: float
    exit_time_sd: float
    delta: float
    eps: float
    n_capped: int = 0
    time_cap: float = float("inf")
    status: str = "ok"

    @property
    def n_exited(self) -> int:
        return self.n_paths - self.n_capped

    @property
    def capped_fraction(self) -> float:
        return self.n_capped / self.n_paths

    @property
    def exit_time_se(self) -> float:
        return self.exit_time_sd / np.sqrt(max(self.n_exited, 1))

    def rows(self) -> list[dict]:
        return [{
            "eps": self.eps, "delta": self.delta, "n_paths": self.n_paths,
            "p_plus_hat": self.p_plus_hat, "p_minus_hat": self.p_minus_hat,
            "ci_halfwidth": self.ci_halfwidth, "mean_exit_time": self.mean_exit_time,
            "exit_time_sd": self.exit_time_sd, "n_capped": self.n_capped,
            "time_cap": self.time_cap, "status": self.status,
        }]


def _selection_chunk(seeds, m, eps, delta, cap, policy):
    r = integrate_small_noise(m, eps, cap, policy, seeds, exit_level=delta)
    return Tally(seeds, {"side": r.exit_side, "time": r.exit_time})


def _default_exit_policy(m: SmallNoiseModel, delta: float) -> StepPolicy:
    rp, rm, _, _ = m.frozen()
    t0 = noiseless_exit_time(delta, max(rp, rm), m.gamma)
    return StepPolicy(min(1e-3, t0 / 100.0), "two-level")


def selection_tally(m: SmallNoiseModel, eps: float, delta: float, n_paths: int, seed0: int,
                    policy: StepPolicy | None = None, workers: int | None = None,
                    chunk: int | None = None) -> Tally:
    """Per-path exit sides and exit times for :func:`run_selection`."""
    n = _check_n(n_paths)
    if not delta > 0:
        raise DomainError("delta must be positive")
    if not eps > 0:
        raise DomainError("eps must be positive")
    FrozenParams.from_model(m).require("repulsive")
    _check_local_signs(m, delta, +1)
    policy = _default_exit_policy(m, delta) if policy is None else policy
    cap = selection_time_cap(m, delta)
    return run_tally(_selection_chunk, seed_range(seed0, n), workers=workers, chunk=chunk,
                     m=m, eps=float(eps), delta=float(delta), cap=cap, policy=policy)


def estimate_from_tally(t: Tally, eps: float, delta: float, cap: float,
                        warn: bool = True) -> SelectionEstimate:
    """Reduce a selection tally to a :class:`SelectionEstimate`."""
    side, tau = t["side"], t["time"]
    n = t.n
    k_plus = int(np.sum(side == 1))
    k_minus = int(np.sum(side == -1))
    n_ex = k_plus + k_minus
    capped = n - n_ex
    if n_ex:
        pp = k_plus / n_ex
        times = tau[side != 0]
        mt = float(np.mean(times))
        sd = float(np.std(times, ddof=1)) if n_ex > 1 else 0.0
    else:
        pp, mt, sd = float("nan"), float("nan"), float("nan")
    status = "ok"
    if capped > 0.01 * n:
        status = "warning"
        if warn:
            warnings.warn(
                f"{capped} of {n} paths did not exit before the time cap {cap:.4g}; "
                "eps may be too large for the asymptotic regime", RuntimeWarning, stacklevel=3)
    return SelectionEstimate(n, pp, 1.0 - pp if n_ex else float("nan"), binomial_ci(k_plus, n_ex),
                             mt, sd, float(delta), float(eps), capped, cap, status)


def run_selection(m: SmallNoiseModel, eps: float, delta: float, n_paths: int, seed0: int,
                  policy: StepPolicy | None = None, workers: int | None = None,
                  chunk: int | None = None) -> SelectionEstimate:
    """Estimate the exit-side probabilities of ``|y| = delta``.

    Parameters
    ----------
    m : SmallNoiseModel
        Repulsive model.
    eps, delta : float
    n_paths : int
        Positive number of paths, seeds ``seed0 .. seed0 + n_paths - 1``.
    seed0 : int
    policy : StepPolicy, optional
        Defaults to a two-level policy with base step
        ``min(1e-3, t0 / 100)`` where ``t0`` is the fastest noiseless
        exit time.
    workers, chunk : int, optional
        Parallel partition; does not change the result.

    Returns
    -------
    SelectionEstimate
        ``status == "warning"`` (and a :class:`RuntimeWarning`) when more than
        1% of paths hit the time cap ``100 delta**(1-g) / ((1-g) min rate)``.

    Raises
    ------
    DomainError
        If ``n_paths < 1``, the model is not repulsive at the start, or the
        rate changes sign within ``delta`` of the start.
    """
    t = selection_tally(m, eps, delta, n_paths, seed0, policy, workers, chunk)
    return estimate_from_tally(t, eps, delta, selection_time_cap(m, delta))


# ---------------------------------------------------------------------------
# pathwise selection


@dataclass
class PathwiseSelection:
    """Sup-distances to the matching extremal solution, by exit side.

    Attributes
    ----------
    eps, delta, T : float
    quantile_levels : tuple of float
    plus, minus : ndarray
        Distances of paths that exited upward and downward.
    n_capped : int
        Paths that never reached ``|y| = delta`` (discarded).
    """

    eps: float
    delta: float
    T: float
    plus: np.ndarray
    minus: np.ndarray
    n_capped: int
    quantile_levels: tuple = (0.1, 0.25, 0.5, 0.75, 0.9)

    @property
    def n_paths(self) -> int:
        return self.plus.size + self.minus.size + self.n_capped

    @property
    def capped_fraction(self) -> float:
        return self.n_capped / max(self.n_paths, 1)

    def quantiles(self, side: int) -> np.ndarray:
        v = self.plus if side > 0 else self.minus
        if not v.size:
            return np.full(len(self.quantile_levels), np.nan)
        return np.quantile(v, self.quantile_levels)

    def median(self, side: int | None = None) -> float:
        if side is None:
            v = np.concatenate([self.plus, self.minus])
        else:
            v = self.plus if side > 0 else self.minus
        return float(np.median(v)) if v.size else float("nan")

    def rows(self) -> list[dict]:
        out = []
        for side, name in ((1, "plus"), (-1, "minus")):
            r = {"eps": self.eps, "delta": self.delta, "T": self.T, "side": name,
                 "count": int((self.plus if side > 0 else self.minus).size),
                 "capped_fraction": self.capped_fraction}
            for q, v in zip(self.quantile_levels, self.quantiles(side)):
                r[f"q{int(round(100 * q)):02d}"] = float(v)
            out.append(r)
        return out


def _pathwise_chunk(seeds, m, eps, delta, T, horizon, policy, ext, y0):
    n = len(seeds)
    dist = np.zeros((n, 2))

    def obs(ids, t, x, y):
        w = t <= T * (1 + 1e-12)
        if not w.any():
            return
        ids, t, x, y = ids[w], t[w], x[w], y[w]
        for j, e in enumerate(ext):
            xe, ye = e.state_at(t)
            dd = np.abs(x - xe.reshape(x.shape)).sum(axis=1) + np.abs(y - ye)
            dist[ids, j] = np.maximum(dist[ids, j], dd)

    cps = [T] if 0 < T < horizon else None
    r = integrate_small_noise(m, eps, horizon, policy, seeds, y0=y0, exit_level=delta,
                              stop_on_exit=True, exit_stop_time=T, checkpoints=cps,
                              observer=obs)
    side = r.exit_side.astype(np.int8)
    d = np.where(side == 1, dist[:, 0], np.where(side == -1, dist[:, 1], np.nan))
    return Tally(seeds, {"side": side, "dist": d})


def run_pathwise_selection(m: SmallNoiseModel, eps: float, delta: float, n_paths: int,
                           T: float, seed0: int, policy: StepPolicy | None = None,
                           h: float = 1e-3, y0: float = 0.0, workers: int | None = None,
                           chunk: int | None = None) -> PathwiseSelection:
    """Sup-distance over ``[0, T]`` of each path to the extremal solution of its exit side.

    Paths run until both ``t >= T`` and ``|y|`` has reached ``delta``, or
    until the selection time cap. The exit side selects the extremal
    solution; paths that never exit are discarded and counted.

    Parameters
    ----------
    m : SmallNoiseModel
    eps : float
        Noise level, ``eps >= 0``.
    delta : float
        Exit level defining the side.
    n_paths : int
    T : float
        Comparison window.
    seed0 : int
    policy : StepPolicy, optional
    h : float
        Step of the extremal solver.
    y0 : float
        Start of the fast state (0 for the standard problem).
    """
    n = _check_n(n_paths)
    if not eps >= 0:
        raise DomainError("eps must be non-negative")
    FrozenParams.from_model(m).require("repulsive")
    _check_local_signs(m, delta, +1)
    policy = _default_exit_policy(m, delta) if policy is None else policy
    horizon = max(float(T), selection_time_cap(m, delta))
    ext = (extremal_solution(m, 1, T, h), extremal_solution(m, -1, T, h))
    t = run_tally(_pathwise_chunk, seed_range(seed0, n), workers=workers, chunk=chunk,
                  m=m, eps=float(eps), delta=float(delta), T=float(T), horizon=horizon,
                  policy=policy, ext=ext, y0=float(y0))
    side, d = t["side"], t["dist"]
    return PathwiseSelection(float(eps), float(delta), float(T), d[side == 1], d[side == -1],
                             int(np.sum(side == 0)))


# ---------------------------------------------------------------------------
# attraction and the moment bound


def _attraction_chunk(seeds, m, eps, T, policy, xbar, cps):
    n = len(seeds)
    supx = np.zeros(n)
    supy = np.zeros(n)

    def obs(ids, t, x, y):
        dev = np.linalg.norm(x - xbar(t).reshape(x.shape), axis=1)
        supx[ids] = np.maximum(supx[ids], dev)
        supy[ids] = np.maximum(supy[ids], np.abs(y))

    r = integrate_small_noise(m, eps, T, policy, seeds, checkpoints=cps, observer=obs)
    return Tally(seeds, {"supx": supx, "supy": supy, "y2": r.cp_y ** 2})


def _attraction_tallies(m, eps_ladder, T, n_paths, seed0, policy, h, n_checkpoints,
                        workers, chunk):
    n = _check_n(n_paths)
    seed0 = check_seed(seed0)
    eps = _ladder(eps_ladder, "eps")
    if np.any(eps <= 0):
        raise DomainError("eps values must be positive")
    if not T > 0:
        raise DomainError("horizon T must be positive")
    FrozenParams.from_model(m).require("attractive")
    policy = StepPolicy(5e-3, "two-level") if policy is None else policy
    xbar = averaged_ode_solve(lambda x: averaged_drift(x, m), m.x0, T, h)
    cps = np.linspace(0.0, T, n_checkpoints + 1)[1:]
    out = []
    for i, e in enumerate(eps):
        out.append(run_tally(_attraction_chunk, seed_range(seed0 + i * n, n), workers=workers,
                             chunk=chunk, m=m, eps=float(e), T=float(T), policy=policy,
                             xbar=xbar, cps=cps))
    return eps, out, xbar


def run_attraction(m: SmallNoiseModel, eps_ladder, T: float, n_paths: int, seed0: int,
                   policy: StepPolicy | None = None, h: float = 1e-3,
                   n_checkpoints: int = 100, workers: int | None = None,
                   chunk: int | None = None) -> ConvergenceLadder:
    """Distance of the slow path to the averaged ODE and size of the fast path.

    For each ``eps`` (rung ``i`` uses seeds ``seed0 + i n_paths ...``)
    reports the medians of ``sup_t |X(t) - Xbar(t)|`` and ``sup_t |Y(t)|``,
    where ``Xbar`` solves the averaged ODE, and ``sup_t E Y(t)^2`` over
    ``n_checkpoints`` equally spaced times. The slope of the ``sup |Y|``
    medians against ``eps`` is reported under ``slopes["sup_y"]``; the
    layer scaling predicts ``2 / (gamma + 1)``.

    Parameters
    ----------
    m : SmallNoiseModel
        Attractive model.
    eps_ladder : sequence of float
        Strictly decreasing.
    T : float
    n_paths, seed0 : int
    policy : StepPolicy, optional
        Default ``StepPolicy(5e-3, "two-level")``.
    h : float
        Step of the averaged ODE solver.
    """
    eps, tallies, xbar = _attraction_tallies(m, eps_ladder, T, n_paths, seed0, policy, h,
                                             n_checkpoints, workers, chunk)
    med_x = np.array([np.median(t["supx"]) for t in tallies])
    med_y = np.array([np.median(t["supy"]) for t in tallies])
    ey2 = np.array([np.max(t["y2"].mean(axis=0)) for t in tallies])
    return ConvergenceLadder(
        "eps", eps,
        {"median_sup_x_dev": med_x, "median_sup_y": med_y, "sup_mean_y2": ey2},
        {"median_sup_x_dev": np.array([_median_se(t["supx"]) for t in tallies]),
         "median_sup_y": np.array([_median_se(t["supy"]) for t in tallies])},
        np.array([t.n for t in tallies]),
        {"sup_y": loglog_slope(eps, med_y), "sup_x_dev": loglog_slope(eps, med_x)},
        {"xbar_T": xbar(T).tolist(), "layer_exponent": 2.0 / (m.gamma + 1.0)},
    )


def run_moment_bound(m: SmallNoiseModel, eps_ladder, T: float, n_paths: int, seed0: int,
                     policy: StepPolicy | None = None, n_checkpoints: int = 100,
                     workers: int | None = None, chunk: int | None = None) -> ConvergenceLadder:
    """Check ``sup_t E Y(t)^2 <= C eps^2`` with ``C`` fitted at the largest eps.

    Returns
    -------
    ConvergenceLadder
        ``stats["sup_mean_y2"]`` per rung, ``stats["ratio"]`` equal to
        ``sup_mean_y2 / eps^2``, ``extra["C"]`` the fitted constant and
        ``extra["bound_holds"]`` a per-rung boolean list.
    """
    eps, tallies, _ = _attraction_tallies(m, eps_ladder, T, n_paths, seed0, policy, 1e-2,
                                          n_checkpoints, workers, chunk)
    ey2 = np.array([np.max(t["y2"].mean(axis=0)) for t in tallies])
    se = []
    for t in tallies:
        j = int(np.argmax(t["y2"].mean(axis=0)))
        se.append(t["y2"][:, j].std(ddof=1) / np.sqrt(t.n))
    ratio = ey2 / eps ** 2
    C = float(ratio[0])
    # compare ratios so the fitting rung holds exactly
    holds = [bool(r <= C) for r in ratio]
    return ConvergenceLadder("eps", eps, {"sup_mean_y2": ey2, "ratio": ratio},
                             {"sup_mean_y2": np.array(se)}, np.array([t.n for t in tallies]),
                             {"sup_mean_y2": loglog_slope(eps, ey2)},
                             {"C": C, "bound_holds": holds})


# ---------------------------------------------------------------------------
# exit-time scaling


def run_exit_time_scaling(m: SmallNoiseModel, eps: float, delta_ladder, n_paths: int,
                          seed0: int, policy: StepPolicy | None = None,
                          workers: int | None = None, chunk: int | None = None
                          ) -> ConvergenceLadder:
    """Mean exit time of ``|y| = delta`` along a decreasing delta ladder.

    Rung ``i`` uses seeds ``seed0 + i n_paths ...``. The log-log slope of
    the mean exit time against ``delta`` is ``slopes["mean_exit_time"]``
    (``None`` for a single rung). ``extra["bound"]`` holds the quadrature
    bound per rung and ``extra["below_bound"]`` whether
    ``mean <= bound + 3 se``.
    """
    n = _check_n(n_paths)
    seed0 = check_seed(seed0)
    deltas = _ladder(delta_ladder, "delta")
    p = FrozenParams.from_model(m)
    means, ses, caps, bounds = [], [], [], []
    for i, d in enumerate(deltas):
        t = selection_tally(m, eps, d, n, seed0 + i * n, policy, workers, chunk)
        est = estimate_from_tally(t, eps, d, selection_time_cap(m, d))
        means.append(est.mean_exit_time)
        ses.append(est.exit_time_se)
        caps.append(est.n_capped)
        bounds.append(exit_time_bound(d, p, eps))
    means, ses, bounds = map(np.array, (means, ses, bounds))
    below = [bool(mu <= b + 3 * s) for mu, b, s in zip(means, bounds, ses)]
    return ConvergenceLadder(
        "delta", deltas, {"mean_exit_time": means, "bound": bounds},
        {"mean_exit_time": ses}, np.full(deltas.size, n),
        {"mean_exit_time": loglog_slope(deltas, means)},
        {"bound": bounds.tolist(), "below_bound": below, "n_capped": caps,
         "expected_slope": 1.0 - m.gamma},
    )


# ---------------------------------------------------------------------------
# frozen ergodicity


def _frozen_chunk(seeds, rates, noises, gamma, y0, T, dt, cps, burn_in):
    r = integrate_frozen(rates, noises, gamma, y0, T, dt, seeds, checkpoints=cps,
                         burn_in=burn_in)
    return Tally(seeds, {"cp": r.cp_y, "occ": r.occupation})


def run_frozen_ergodicity(x, m: SmallNoiseModel, T_ladder, n_paths: int, y0_pair,
                          seed0: int, dt: float = 0.01, bins: int = 64,
                          burn_in: float | None = None, workers: int | None = None,
                          chunk: int | None = None) -> ConvergenceLadder:
    """Convergence of the frozen fast law to its stationary density.

    Two ensembles start at ``y0_pair[0]`` (seeds ``seed0 ...``) and
    ``y0_pair[1]`` (seeds ``seed0 + n_paths ...``) and are observed at
    every horizon of the increasing ``T_ladder``. Reported per horizon:
    the two-sample TV distance and the TV distance of each ensemble to the
    exact bin masses, on ``bins`` equal bins covering all but 5e-4 of the
    stationary mass in each tail plus two overflow bins. The fraction of
    time with ``y > 0`` after ``burn_in`` (default ten relaxation times,
    at most half the horizon) is compared with the stationary mass.
    """
    n = _check_n(n_paths)
    seed0 = check_seed(seed0)
    Ts = _ladder(T_ladder, "T", decreasing=False)
    x = np.asarray(x, dtype=float).reshape(m.d)
    p = FrozenParams.from_model(m, x)
    dens = invariant_density(p)
    tau = relaxation_time(p)
    Tmax = float(Ts[-1])
    burn = min(10 * tau, Tmax / 2) if burn_in is None else float(burn_in)
    lo, hi = dens.quantile_range()
    edges = np.linspace(lo, hi, bins + 1)
    masses = dens.bin_masses(edges)
    common = dict(rates=(p.rate_plus, p.rate_minus), noises=(p.noise_plus, p.noise_minus),
                  gamma=p.gamma, T=Tmax, dt=dt, cps=Ts, burn_in=burn)
    ta = run_tally(_frozen_chunk, seed_range(seed0, n), workers=workers, chunk=chunk,
                   y0=float(y0_pair[0]), **common)
    tb = run_tally(_frozen_chunk, seed_range(seed0 + n, n), workers=workers, chunk=chunk,
                   y0=float(y0_pair[1]), **common)
    two, tva, tvb = [], [], []
    for j in range(Ts.size):
        a, b = ta["cp"][:, j], tb["cp"][:, j]
        two.append(empirical_tv(a, b, edges))
        tva.append(tv_to_masses(a, edges, masses))
        tvb.append(tv_to_masses(b, edges, masses))
    occ = float(np.mean(np.concatenate([ta["occ"], tb["occ"]])))
    return ConvergenceLadder(
        "T", Ts, {"tv_two_sample": np.array(two), "tv_a_vs_pi": np.array(tva),
                  "tv_b_vs_pi": np.array(tvb)},
        {}, np.full(Ts.size, n),
        {},
        {"occupation_plus": occ, "mass_plus": dens.mass_plus, "relaxation_time": tau,
         "burn_in": burn, "edges": (float(lo), float(hi), bins),
         "floor": float(np.sqrt(bins / (2 * np.pi * n)))},
    )


# ---------------------------------------------------------------------------
# martingale residual


@dataclass(frozen=True)
class BranchDrift:
    """Slow drift of one branch on the hyperplane, ``a^sign(x, 0)``.

    Picklable drift override for negative controls.
    """

    m: TwoScaleModel
    sign: int = 1

    def __call__(self, xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, self.m.d)
        f = self.m.slow_drift.plus if self.sign > 0 else self.m.slow_drift.minus
        zero = np.zeros((xs.shape[0], self.m.k)) if self.m.k > 1 else np.zeros(xs.shape[0])
        return np.asarray(f(xs, zero), dtype=float).reshape(xs.shape)


@dataclass(frozen=True)
class HistoryWeight:
    """``exp(-|x(s1) - center|^2 / width^2)``, a bounded history weight."""

    center: tuple
    width: float

    def __call__(self, xs1):
        z = np.asarray(xs1, dtype=float) - np.asarray(self.center)
        return np.exp(-np.sum(z * z, axis=1) / self.width ** 2)


def _residual_chunk(seeds, tm, eps, t, s, s1, dt, gens, funcs):
    n = len(seeds)
    G, F = len(gens), len(funcs)
    integ = np.zeros((G, F, n))
    res_holder = {}

    def obs(j, tt, x, y):
        h = res_holder["h"]
        tj = j * h
        if tj >= s - 1e-12 and tj < t - 1e-12:
            for g, gen in enumerate(gens):
                integ[g] += gen.apply(funcs, x) * h

    N = max(1, int(np.ceil(t / dt - 1e-9)))
    res_holder["h"] = t / N
    r = integrate_two_scale(tm, eps, t, StepPolicy(dt, "uniform"), seeds,
                            checkpoints=[s1, s, t], observer=obs)
    data = {"x_s1": r.cp_x[:, 0], "x_s": r.cp_x[:, 1], "x_t": r.cp_x[:, 2],
            "integ": np.moveaxis(integ, 2, 0)}
    return Tally(seeds, data)


@dataclass
class ResidualTable:
    """Martingale-problem residuals along an eps ladder.

    Attributes
    ----------
    eps : ndarray
    functions : list of str
    weights : list of str
    residual : ndarray, shape (E, F, W)
        ``|E Phi (f(X_t) - f(X_s) - int_s^t L f(X_r) dr)|``.
    floor : ndarray, shape (E, F, W)
        Bootstrap standard deviation of the estimate.
    control : ndarray or None, shape (F, W)
        Residual at the smallest eps with the wrong drift.
    control_floor : ndarray or None
    """

    eps: np.ndarray
    functions: list
    weights: list
    residual: np.ndarray
    floor: np.ndarray
    control: np.ndarray | None = None
    control_floor: np.ndarray | None = None
    n_paths: int = 0

    def passes(self, factor: float = 2.0) -> np.ndarray:
        """Per (function, weight): the final rung lies within ``factor`` floors
        and no rung rises significantly above the previous one.

        A rise counts as significant when it exceeds ``factor`` times the
        combined floor ``hypot(floor_i, floor_i+1)``.
        """
        r, f = self.residual, self.floor
        ok = r[-1] <= factor * f[-1]
        for i in range(len(self.eps) - 1):
            ok &= (r[i + 1] - r[i]) <= factor * np.hypot(f[i], f[i + 1])
        return ok

    def control_ratio(self) -> np.ndarray | None:
        if self.control is None:
            return None
        return self.control / self.control_floor

    def rows(self) -> list[dict]:
        out = []
        for i, e in enumerate(self.eps):
            for j, fn in enumerate(self.functions):
                for k, w in enumerate(self.weights):
                    out.append({"eps": float(e), "function": fn, "weight": w,
                                "n_paths": self.n_paths,
                                "residual": float(self.residual[i, j, k]),
                                "floor": float(self.floor[i, j, k]), "control": ""})
        if self.control is not None:
            for j, fn in enumerate(self.functions):
                for k, w in enumerate(self.weights):
                    out.append({"eps": float(self.eps[-1]), "function": fn, "weight": w,
                                "n_paths": self.n_paths,
                                "residual": float(self.control[j, k]),
                                "floor": float(self.control_floor[j, k]),
                                "control": "wrong-drift"})
        return out


def run_martingale_residual(
    tm: TwoScaleModel,
    eps_ladder,
    T: float,
    n_paths: int,
    test_functions: dict | None,
    seed0: int,
    *,
    s: float | None = None,
    s1: float | None = None,
    dt_factor: float = 0.01,
    history_width: float = 0.3,
    n_boot: int = 200,
    sampler: FrozenSampler | None = None,
    control: bool = True,
    workers: int | None = None,
    chunk: int | None = None,
) -> ResidualTable:
    """Residual of the martingale problem of the averaged generator.

    For each ``eps`` estimates
    ``E Phi(X(s1)) [f(X(T)) - f(X(s)) - int_s^T L f(X(r)) dr]`` over
    ``n_paths`` paths (rung ``i`` uses seeds ``seed0 + i n_paths ...``) for
    every test function and two weights: ``Phi = 1`` and
    ``Phi = exp(-|X(s1) - x0|^2 / history_width^2)``. The time integral is
    a left-point sum on the simulation grid, whose step is
    ``dt_factor * eps``. The noise floor is the bootstrap standard deviation
    over ``n_boot`` path resamples.

    With ``control=True`` the smallest rung also evaluates the residual
    with the averaged drift replaced by the upper-branch drift on the
    hyperplane, which must not vanish.

    Parameters
    ----------
    tm : TwoScaleModel
    eps_ladder : sequence of float
        Strictly decreasing.
    T : float
        End time ``t``.
    n_paths, seed0 : int
    test_functions : dict of str to BumpPolynomial, optional
        Default: all bump-polynomials of degree <= 3 with radius 2.
    s, s1 : float, optional
        Defaults ``T / 2`` and ``T / 4``.
    """
    n = _check_n(n_paths)
    seed0 = check_seed(seed0)
    eps = _ladder(eps_ladder, "eps")
    if np.any(eps <= 0):
        raise DomainError("eps values must be positive")
    s = T / 2 if s is None else float(s)
    s1 = T / 4 if s1 is None else float(s1)
    if not 0 <= s1 <= s < T:
        raise DomainError("need 0 <= s1 <= s < T")
    funcs = test_function_registry(tm.d) if test_functions is None else dict(test_functions)
    names = list(funcs)
    flist = [funcs[k] for k in names]
    gen = AveragedGenerator(tm, sampler)
    wrong = AveragedGenerator(tm, sampler, drift_override=BranchDrift(tm, 1)) if control else None
    weight = HistoryWeight(tm.x0, history_width)
    E, F = eps.size, len(flist)
    res = np.empty((E, F, 2))
    flo = np.empty((E, F, 2))
    ctrl = ctrl_f = None
    for i, e in enumerate(eps):
        gens = [gen] + ([wrong] if (wrong is not None and i == E - 1) else [])
        t = run_tally(_residual_chunk, seed_range(seed0 + i * n, n), workers=workers,
                      chunk=chunk, tm=tm, eps=float(e), t=float(T), s=s, s1=s1,
                      dt=dt_factor * float(e), gens=gens, funcs=flist)
        fx_t = np.stack([f.value(t["x_t"]) for f in flist], axis=1)
        fx_s = np.stack([f.value(t["x_s"]) for f in flist], axis=1)
        wts = np.stack([np.ones(t.n), weight(t["x_s1"])], axis=1)  # (n, 2)
        rng = np.random.default_rng(np.random.SeedSequence([seed0, i, 0xB0]))
        for g in range(len(gens)):
            incr = fx_t - fx_s - t["integ"][:, g, :]  # (n, F)
            v = incr[:, :, None] * wts[:, None, :]  # (n, F, 2)
            r = np.abs(v.mean(axis=0))
            fl = bootstrap_floor(v, n_boot, rng)
            if g == 0:
                res[i], flo[i] = r, fl
            else:
                ctrl, ctrl_f = r, fl
    return ResidualTable(eps, names, ["one", "history"], res, flo, ctrl, ctrl_f, n)
