import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holdersel.analysis import FrozenParams, averaged_drift, invariant_density
from holdersel.coeffs import Affine, AtomicMeasure, SignedPower, SmallNoiseModel, TwoScaleModel
from holdersel.errors import SamplingError
from holdersel.generator import (
    AveragedCharacteristics,
    AveragedGenerator,
    BumpPolynomial,
    FrozenSampler,
    JumpKernel,
    averaged_characteristics,
    closed_form_law,
    frozen_law,
    generator_apply,
    split_rhat,
    test_function_registry as registry,
)


def _fd_grad(f, x, h=1e-6):
    g = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f.value(x + e)[0] - f.value(x - e)[0]) / (2 * h)
    return g


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(0, 3), st.integers(0, 3)),
       st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2))
def test_bump_derivatives_match_finite_differences(powers, x):
    f = BumpPolynomial(powers, 2.0, (0.1, -0.2))
    x = np.array(x)
    np.testing.assert_allclose(f.grad(x)[0], _fd_grad(f, x), atol=1e-7)
    H = f.hess(x)[0]
    k = 1e-5
    for i in range(2):
        e = np.zeros(2)
        e[i] = k
        col = (f.grad(x + e)[0] - f.grad(x - e)[0]) / (2 * k)
        np.testing.assert_allclose(H[:, i], col, atol=1e-6)
    np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_registry():
    r = registry(1)
    assert list(r) == [f"{m}*bump(R=2)" for m in ("1", "x1^1", "x1^2", "x1^3")]
    assert len(registry(2, degree=2)) == 6


def test_pure_drift_term():
    f = BumpPolynomial((1,), 2.0)
    avg = AveragedCharacteristics.simple([0.3])
    x = np.array([0.0])
    assert generator_apply(f, x, avg) == pytest.approx(0.3 * f.grad(x)[0, 0], rel=1e-15)


def test_zero_where_function_is_locally_constant():
    f = BumpPolynomial((2,), 1.0)
    avg = AveragedCharacteristics.simple([0.7], [[0.4]],
                                        small=JumpKernel([[0.1]], [1.0]),
                                        large=JumpKernel([[0.5]], [2.0]))
    # f vanishes on a neighbourhood of x = 5, and no jump reaches the support
    assert generator_apply(f, [5.0], avg) == 0.0


def test_single_atom_uncompensated_kernel():
    f = BumpPolynomial((1,), 2.0)
    lam, v0, x = 1.7, 0.45, np.array([0.3])
    base = AveragedCharacteristics.simple([0.2], [[0.1]])
    jump = AveragedCharacteristics.simple([0.2], [[0.1]], large=JumpKernel([[v0]], [lam]))
    diff = generator_apply(f, x, jump) - generator_apply(f, x, base)
    manual = lam * (f.value(x + v0)[0] - f.value(x)[0])
    assert diff == pytest.approx(manual, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 2), st.floats(-3, 3),
       st.floats(-1.5, 1.5))
def test_generator_linearity(a1, a2, b, c, x):
    f, g = BumpPolynomial((1,), 2.0), BumpPolynomial((2,), 2.0)
    k = JumpKernel([[0.2], [-0.6]], [0.5, 1.5])
    A1 = AveragedCharacteristics.simple([a1], [[b]], small=k)
    A2 = AveragedCharacteristics.simple([a2])
    A12 = AveragedCharacteristics.simple([a1 + a2], [[b]], small=k)

    class Combo:
        d = 1

        def value(self, x):
            return f.value(x) + c * g.value(x)

        def grad(self, x):
            return f.grad(x) + c * g.grad(x)

        def hess(self, x):
            return f.hess(x) + c * g.hess(x)

    lf, lg = generator_apply(f, [x], A1), generator_apply(g, [x], A1)
    assert generator_apply(Combo(), [x], A1) == pytest.approx(lf + c * lg, abs=1e-10)
    lsum = generator_apply(f, [x], A1) + generator_apply(f, [x], A2)
    assert generator_apply(f, [x], A12) == pytest.approx(lsum, abs=1e-10)


def _coupled(slow_drift=None, jumps=True):
    kw = dict(d=1, k=1,
              slow_drift=slow_drift or {"plus": [1.0], "minus": [0.0]},
              slow_diffusion=[[0.3]],
              fast_drift={"plus": SignedPower(-8.0, 0.5), "minus": SignedPower(-1.0, 0.5)},
              fast_diffusion=1.0, cutoff=0.5, diss_exponent=0.5)
    if jumps:
        kw.update(slow_jump={"plus": [1.0], "minus": [0.5]},
                  slow_measure=AtomicMeasure([0.1, 0.8], [1.0, 1.0]))
    return TwoScaleModel(**kw)


def test_closed_form_characteristics():
    avg = averaged_characteristics(_coupled(), [0.0])
    assert avg.method == "closed-form"
    assert avg.drift[0] == pytest.approx(0.2, rel=1e-10)
    assert avg.diffusion[0, 0] == pytest.approx(0.09, rel=1e-12)
    small = dict(zip(avg.small_kernel.amplitudes[:, 0].round(12), avg.small_kernel.weights))
    large = dict(zip(avg.large_kernel.amplitudes[:, 0].round(12), avg.large_kernel.weights))
    assert small == pytest.approx({0.1: 0.2, 0.05: 0.8})
    assert large == pytest.approx({0.8: 0.2, 0.4: 0.8})


def test_closed_form_law_moments():
    p = FrozenParams(-8.0, -1.0, 1.0, 1.0, 0.5)
    law = closed_form_law(p)
    dens = invariant_density(p)
    assert law.weights.sum() == pytest.approx(1.0)
    assert law.weights[law.nodes[:, 0] >= 0].sum() == pytest.approx(dens.mass_plus, rel=1e-12)
    from scipy import integrate

    m2 = integrate.quad(lambda y: y * y * dens.pdf(y), -np.inf, np.inf, epsabs=1e-12)[0]
    # |y|^2 is a fractional power of the Laguerre variable, so only ~1e-5 accuracy
    assert law.weights @ law.nodes[:, 0] ** 2 == pytest.approx(m2, rel=1e-4)


def test_sampled_drift_matches_closed_form():
    m = _coupled(jumps=False)
    s = FrozenSampler(method="monte-carlo", n_chains=16, n_draws=100, burn_in=10.0)
    avg = averaged_characteristics(m, [0.0], s)
    assert avg.method == "monte-carlo"
    exact = float(averaged_drift([0.0], SmallNoiseModel.constant(0.5, -8.0, -1.0, 1.0, 1.0,
                                                                 1.0, 0.0))[0])
    assert abs(avg.drift[0] - exact) <= 3 * avg.drift_se[0]
    assert avg.drift_se[0] > 0


def test_y_independent_drift_and_no_jumps():
    m = _coupled(slow_drift=[0.6], jumps=False)
    avg = averaged_characteristics(m, [0.0])
    assert avg.drift[0] == pytest.approx(0.6, rel=1e-13)
    assert avg.small_kernel.mass == 0 and avg.large_kernel.mass == 0


def test_sampler_diagnostic_raises():
    m = TwoScaleModel(d=1, k=1, slow_drift=[0.0], slow_diffusion=[[0.0]],
                      fast_drift=Affine(0.0, None, -1e-3), fast_diffusion=1.0, y0=[0.0])
    s = FrozenSampler(method="monte-carlo", n_chains=4, n_draws=20, burn_in=0.1, thin=0.05,
                      rhat_max=1.01)
    with pytest.raises(SamplingError):
        frozen_law(m, [0.0], s)


def test_split_rhat():
    rng = np.random.default_rng(0)
    assert split_rhat(rng.normal(size=(8, 500))) == pytest.approx(1.0, abs=0.02)
    shifted = rng.normal(size=(8, 500)) + np.arange(8)[:, None]
    assert split_rhat(shifted) > 2


def test_batched_apply_matches_pointwise():
    m = _coupled()
    gen = AveragedGenerator(m)
    funcs = list(registry(1).values())
    xs = np.linspace(-1.5, 1.5, 7)[:, None]
    F = gen.apply(funcs, xs)
    avg = averaged_characteristics(m, [0.0])
    for i, f in enumerate(funcs):
        for j, x in enumerate(xs):
            assert F[i, j] == pytest.approx(generator_apply(f, x, avg), abs=1e-13)
