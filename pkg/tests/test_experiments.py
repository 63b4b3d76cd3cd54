import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holdersel.coeffs import Affine, AtomicMeasure, SmallNoiseModel, TwoScaleModel
from holdersel.errors import DomainError
from holdersel.experiments import (
    Tally,
    binomial_ci,
    estimate_from_tally,
    loglog_slope,
    run_exit_time_scaling,
    run_frozen_ergodicity,
    run_martingale_residual,
    run_pathwise_selection,
    run_selection,
    run_tally,
    selection_tally,
    selection_time_cap,
)
from holdersel.generator import BumpPolynomial
from holdersel.sim import StepPolicy


def _square(seeds, scale=1.0):
    s = np.asarray(seeds)
    return Tally(s, {"v": scale * s.astype(float) ** 2, "w": np.stack([s, -s], axis=1)})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60, unique=True),
       st.integers(1, 60))
def test_tally_merge_matches_full_run(seeds, split):
    full = _square(seeds)
    k = min(split, len(seeds))
    merged = _square(seeds[:k]).merge(_square(seeds[k:])) if k < len(seeds) else full
    assert merged.equals(full)
    # merge order is irrelevant
    parts = [_square(seeds[i::3]) for i in range(3) if seeds[i::3]]
    assert Tally.merge_all(parts[::-1]).equals(full)


def test_tally_rejects_overlap_and_mismatch():
    with pytest.raises(DomainError):
        _square([1, 2]).merge(_square([2, 3]))
    with pytest.raises(DomainError):
        _square([1]).merge(Tally([2], {"v": [1.0]}))
    with pytest.raises(DomainError):
        Tally([1, 1], {})


@pytest.mark.parametrize("chunk", [1, 7, None])
def test_run_tally_independent_of_chunking(chunk):
    seeds = np.arange(30)
    assert run_tally(_square, seeds, chunk=chunk, scale=2.0).equals(_square(seeds, 2.0))


def _sym():
    return SmallNoiseModel.constant(0.5, 2.0, 2.0)


def test_selection_determinism_across_partitions():
    m = SmallNoiseModel.constant(0.5, 4.0, 1.0, drift_plus=1.0, drift_minus=-1.0)
    a = selection_tally(m, 0.05, 0.1, 300, 11)
    b = selection_tally(m, 0.05, 0.1, 300, 11, chunk=37)
    c = selection_tally(m, 0.05, 0.1, 300, 11, workers=2, chunk=100)
    assert a.equals(b) and a.equals(c)
    e = run_selection(m, 0.05, 0.1, 300, 11)
    assert e.p_plus_hat + e.p_minus_hat == pytest.approx(1.0, abs=1e-15)
    assert e.status == "ok" and e.n_capped == 0


def test_selection_rejects_bad_inputs():
    with pytest.raises(DomainError):
        run_selection(_sym(), 0.05, 0.1, 0, 0)
    with pytest.raises(DomainError):
        run_selection(SmallNoiseModel.constant(0.5, -1.0, -1.0, regime="attractive"),
                      0.05, 0.1, 10, 0)


def test_binomial_interval_coverage():
    # 50 disjoint replicates of 400 paths from the symmetric model, true p = 1/2
    m, reps, n = _sym(), 50, 400
    t = selection_tally(m, 0.05, 0.1, reps * n, 0)
    cap = selection_time_cap(m, 0.1)
    covers = 0
    for r in range(reps):
        idx = slice(r * n, (r + 1) * n)
        sub = Tally(t.seeds[idx], {k: v[idx] for k, v in t.data.items()})
        e = estimate_from_tally(sub, 0.05, 0.1, cap)
        covers += abs(e.p_plus_hat - 0.5) <= e.ci_halfwidth
    assert covers >= 45


def test_capped_paths_give_warning_status():
    side = np.array([1, -1, 0, 0, 1] * 20, dtype=np.int8)
    t = Tally(np.arange(100), {"side": side, "time": np.where(side != 0, 1.0, np.inf)})
    with pytest.warns(RuntimeWarning, match="time cap"):
        e = estimate_from_tally(t, 0.5, 0.1, 3.0)
    assert e.status == "warning" and e.n_capped == 40
    assert e.p_plus_hat == pytest.approx(2 / 3)


def test_statistics_helpers():
    assert binomial_ci(50, 100) == pytest.approx(1.959963984540054 * 0.05)
    assert np.isnan(binomial_ci(0, 0))
    assert loglog_slope([1.0], [2.0]) is None
    assert loglog_slope([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)


def test_exit_time_single_rung_has_no_slope():
    lad = run_exit_time_scaling(_sym(), 0.01, [0.1], 200, 0)
    assert lad.slopes["mean_exit_time"] is None
    assert lad.rows()[0]["slope_mean_exit_time"] == ""


def test_pathwise_zero_window():
    m = SmallNoiseModel.constant(0.5, 4.0, 1.0)
    r = run_pathwise_selection(m, 1e-3, 0.1, 50, 0.0, 0)
    assert r.n_capped == 0
    assert np.all(np.concatenate([r.plus, r.minus]) == 0.0)


def test_pathwise_noiseless_start_off_zero_follows_extremal():
    m = SmallNoiseModel.constant(0.5, 1.0, 1.0)
    r = run_pathwise_selection(m, 0.0, 0.1, 3, 1.0, 0, policy=StepPolicy(1e-4, "uniform"),
                               y0=1e-12)
    assert r.minus.size == 0 and r.plus.size == 3
    assert np.max(r.plus) < 5e-3


def test_ergodicity_equal_starts():
    m = SmallNoiseModel.constant(0.5, -1.0, -1.0, regime="attractive")
    lad = run_frozen_ergodicity([0.0], m, [2.0, 5.0], 2000, (0.3, 0.3), 0, dt=0.01)
    # identical starts, independent seeds: two-sample TV sits at the sampling floor
    assert np.all(lad.stats["tv_two_sample"] < 3 * lad.extra["floor"])
    assert lad.extra["mass_plus"] == 0.5
    with pytest.raises(DomainError):
        run_frozen_ergodicity([0.0], m, [5.0, 2.0], 10, (0.0, 0.0), 0)


def _decoupled():
    # slow motion independent of the fast one: the residual is pure noise
    return TwoScaleModel(d=1, k=1, slow_drift=[0.5], slow_diffusion=[[0.4]],
                         fast_drift=Affine(0.0, None, -1.0), fast_diffusion=1.0,
                         slow_jump=[1.0], slow_measure=AtomicMeasure([0.2, 0.9], [1.0, 0.5]),
                         cutoff=0.5)


def test_decoupled_residual_at_noise_floor():
    funcs = {"x": BumpPolynomial((1,), 2.0), "x2": BumpPolynomial((2,), 2.0)}
    tab = run_martingale_residual(_decoupled(), [0.1, 0.05], 1.0, 2000, funcs, 3,
                                  dt_factor=0.1, n_boot=100, control=False)
    assert tab.residual.shape == (2, 2, 2)
    assert np.all(tab.residual <= 3 * tab.floor)
    assert tab.control_ratio() is None
    assert len(tab.rows()) == 8


def test_residual_input_checks():
    with pytest.raises(DomainError):
        run_martingale_residual(_decoupled(), [0.05, 0.1], 1.0, 10, None, 0)
    with pytest.raises(DomainError):
        run_martingale_residual(_decoupled(), [0.1], 1.0, 10, None, 0, s=0.2, s1=0.5)
