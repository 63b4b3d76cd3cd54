import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holdersel.coeffs import Affine, BoundedSmooth, SmallNoiseModel
from holdersel.errors import DomainError, IntegrationError, StabilityError
from holdersel.extremal import (
    averaged_ode_solve,
    extremal_solution,
    forced_solution,
    forward_transform,
    inverse_transform,
    rk4_solve,
)


def test_square_root_example():
    m = SmallNoiseModel.constant(0.5, 1.0, 1.0)
    up = extremal_solution(m, +1, 2.0, 1e-2)
    dn = extremal_solution(m, -1, 2.0, 1e-2)
    # the two non-trivial solutions +-t^2/4 of y' = sqrt|y| sgn y
    assert float(up.y_at(1.0)) == pytest.approx(0.25, abs=1e-12)
    assert float(dn.y_at(2.0)) == pytest.approx(-1.0, abs=1e-12)
    x, y = up.state_at(0.0)
    assert float(y) == 0.0 and np.all(x == 0.0)


@pytest.mark.parametrize("gamma", [0.2, 0.5, 0.8])
def test_constant_coefficients_closed_form(gamma):
    c, v, T = 2.0, 0.7, 1.5
    m = SmallNoiseModel.constant(gamma, c, c, drift_plus=v, drift_minus=-v, x0=0.3)
    s = extremal_solution(m, +1, T, 0.05)
    exact = ((1 - gamma) * c * s.times) ** (1 / (1 - gamma))
    np.testing.assert_allclose(s.ys, exact, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(s.xs[:, 0], 0.3 + v * s.times, rtol=1e-12)


def test_symmetric_model_mirrors():
    # psi+(x, y) = -psi-(x, -y) and equal rates: X- = -X+ under x -> -x
    plus = Affine([0.5], [[-1.0]], [[0.2]])
    minus = Affine([-0.5], [[-1.0]], [[0.2]])
    m = SmallNoiseModel(1, 0.5, {"plus": plus, "minus": minus},
                        {"plus": BoundedSmooth(1.0, 2.0, 0.0, [0.3]),
                         "minus": BoundedSmooth(1.0, 2.0, 0.0, [-0.3])},
                        1.0, [[0.0]], [0.0])
    up = extremal_solution(m, +1, 1.0, 1e-3)
    dn = extremal_solution(m, -1, 1.0, 1e-3)
    np.testing.assert_allclose(dn.xs, -up.xs, atol=1e-12)
    np.testing.assert_allclose(dn.ys, -up.ys, atol=1e-12)


def _x_dependent():
    return SmallNoiseModel(1, 0.5, {"plus": [1.0], "minus": [0.0]},
                           {"plus": BoundedSmooth(1.0, 2.0, 0.0, [1.0]), "minus": 1.0},
                           1.0, [[0.0]], [0.0])


def test_transformed_solution_is_fourth_order():
    m = _x_dependent()
    ref = extremal_solution(m, +1, 1.0, 1e-3)
    errs = []
    for h in (0.1, 0.05):
        s = extremal_solution(m, +1, 1.0, h)
        errs.append(abs(s.u[-1] - forward_transform(ref.ys[-1], 0.5)))
    assert errs[0] / errs[1] > 12  # ~16 for fourth order


def test_ode_residual_small_on_dense_output():
    m = _x_dependent()
    s = extremal_solution(m, +1, 1.0, 1e-2)
    t = np.linspace(0.05, 0.95, 181)
    k = 1e-5
    _, yp = s.state_at(t + k)
    _, ym = s.state_at(t - k)
    x, y = s.state_at(t)
    dy = (yp - ym) / (2 * k)
    rate = 2.0 + np.tanh(x.reshape(-1))
    resid = dy - rate * np.sign(y) * np.abs(y) ** 0.5
    assert np.max(np.abs(resid)) < 1e-5


@settings(max_examples=50)
@given(st.floats(0.0, 1e3), st.floats(0.05, 0.95), st.sampled_from([-1, 1]))
def test_transform_round_trip(y, gamma, sign):
    back = inverse_transform(forward_transform(sign * y, gamma), gamma, sign)
    assert back == pytest.approx(sign * y, rel=1e-12, abs=1e-300)


def test_extremal_domain_errors():
    m = SmallNoiseModel.constant(0.5, -1.0, 1.0, regime="attractive")
    with pytest.raises(DomainError):
        extremal_solution(m, +1, 1.0, 0.1)
    with pytest.raises(DomainError):
        extremal_solution(SmallNoiseModel.constant(0.5, 1.0, 1.0), +1, 1.0, 0.1, y0=-0.1)


def test_rk4_order():
    f = lambda t, z: np.array([np.cos(t) * z[0]])  # noqa: E731
    exact = np.exp(np.sin(2.0))
    err = []
    for n in (20, 40):
        Z, _ = rk4_solve(f, [1.0], np.linspace(0, 2.0, n + 1))
        err.append(abs(Z[-1, 0] - exact))
    assert 12 < err[0] / err[1] < 20


def test_averaged_ode():
    h = 0.1
    zero = averaged_ode_solve(lambda x: np.zeros(1), [0.4], 1.0, h)
    assert float(zero(0.73)[0]) == 0.4
    lin = averaged_ode_solve(lambda x: np.array([0.2]), [0.4], 1.0, h)
    assert float(lin(1.0)[0]) == pytest.approx(0.6, abs=1e-15)
    assert float(lin(0.55)[0]) == pytest.approx(0.51, abs=1e-14)
    errs = []
    for hh in (0.1, 0.05):
        dec = averaged_ode_solve(lambda x: -x, [1.0], 1.0, hh)
        errs.append(abs(float(dec(1.0)[0]) - np.exp(-1.0)))
    assert errs[0] < 1e-6 and errs[0] / errs[1] > 12
    with pytest.raises(IntegrationError):
        averaged_ode_solve(lambda x: np.array([np.nan]), [0.0], 1.0, 0.1)


def test_forced_zero_forcing():
    m = SmallNoiseModel.constant(0.5, 1.0, 2.0, drift_plus=1.0, drift_minus=-1.0)
    r = forced_solution(m, +1, [0.0], 0.1, None, 1.0, 1e-3)
    assert r.distance == 0.0 and r.converged


def test_forced_ladder_monotone_to_zero():
    m = SmallNoiseModel.constant(0.5, 1.0, 2.0, drift_plus=1.0, drift_minus=-1.0)
    d = []
    for a in (0.1, 0.01, 0.001, 1e-4):
        f = (lambda t: 0.0 * t, lambda t, a=a: a + 0.0 * t)
        r = forced_solution(m, +1, [0.0], 0.1, f, 1.0, 1e-3)
        assert r.converged
        d.append(r.distance)
    assert all(d[i + 1] < d[i] for i in range(len(d) - 1))
    assert d[-1] < 1e-3


def test_forced_large_forcing_is_unstable():
    m = SmallNoiseModel.constant(0.5, 1.0, 2.0)
    f = (lambda t: 0.0 * t, lambda t: -100.0 * t)
    with pytest.raises(StabilityError):
        forced_solution(m, +1, [0.0], 0.1, f, 1.0, 1e-2)


def test_extremal_bounded():
    m = _x_dependent()
    s = extremal_solution(m, -1, 3.0, 1e-2)
    assert np.all(np.isfinite(s.xs)) and np.all(np.isfinite(s.ys))
    assert np.all(s.ys <= 0)
