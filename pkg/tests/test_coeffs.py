import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holdersel.coeffs import (
    Affine,
    AtomicMeasure,
    BoundedSmooth,
    CoefficientField,
    Constant,
    DensityMeasure,
    GridSpec,
    ParametricFunction,
    SignedPower,
    SmallNoiseModel,
    TwoScaleModel,
    check_exponent,
    eval_field,
    make_function,
    make_measure,
    register_family,
    signed_pow,
    validate_model,
)
from holdersel.errors import DomainError, EvaluationError

reals = st.floats(-1e6, 1e6, allow_nan=False)
exps = st.floats(0.01, 0.99)


# signed power


def test_signed_pow_examples():
    assert signed_pow(0.0, 0.5) == 0.0
    assert signed_pow(-4.0, 0.5) == -2.0
    v = signed_pow(0.01, 1 / 3)
    assert v == pytest.approx(0.2154434690031884, rel=1e-14)
    assert v**3 == pytest.approx(0.01, rel=1e-13)


@given(reals, exps)
def test_signed_pow_odd(y, g):
    assert signed_pow(-y, g) == -signed_pow(y, g)


@given(reals, reals, exps)
def test_signed_pow_monotone(a, b, g):
    lo, hi = min(a, b), max(a, b)
    assert signed_pow(lo, g) <= signed_pow(hi, g)


@pytest.mark.parametrize("g", [0.0, 1.0, 1.5, -0.2, float("nan")])
def test_exponent_range(g):
    with pytest.raises(DomainError, match="0 < gamma < 1"):
        check_exponent(g)


# fields


def test_eval_field_examples():
    f = CoefficientField.constant(2.0, -3.0)
    assert eval_field(f, [0.0], 0.0) == 2.0
    assert eval_field(f, [0.0], -0.1) == -3.0
    g = CoefficientField(Affine(0.0, [1.0], 1.0), Constant(0.0))
    assert eval_field(g, [1.0], 0.5) == pytest.approx(1.5)


class _Spy(ParametricFunction):
    """Records every call; used to prove the minus branch is never consulted."""

    def __init__(self, value):
        self.value = value
        self.calls = 0

    @property
    def shape(self):
        return ()

    def _eval(self, x, y):
        self.calls += 1
        return np.full(x.shape[0], self.value)

    def depends_on_x(self):
        return True

    def to_dict(self):
        return {"family": "spy"}


@settings(max_examples=50)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=20))
def test_eval_field_never_consults_minus_for_nonnegative_y(ys):
    plus, minus = _Spy(1.0), _Spy(-1.0)
    f = CoefficientField(plus, minus)
    y = np.array(ys)
    out = eval_field(f, np.zeros((y.size, 1)), y)
    assert np.all(out == 1.0)
    assert minus.calls == 0


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=20))
def test_eval_field_is_indicator_split(ys):
    f = CoefficientField(Affine(1.0, None, 2.0), Affine(-1.0, None, 3.0))
    y = np.array(ys)
    out = eval_field(f, np.zeros((y.size, 1)), y)
    expected = np.where(y >= 0, 1.0 + 2.0 * y, -1.0 + 3.0 * y)
    np.testing.assert_allclose(out, expected, rtol=1e-14, atol=1e-14)


def test_eval_field_nonfinite_carries_point():
    f = CoefficientField(Constant(1.0), Affine(0.0, [np.inf], 0.0))
    with pytest.raises(EvaluationError) as err:
        eval_field(f, [[1.0], [2.0]], [0.5, -0.5])
    assert err.value.x.tolist() == [2.0]
    assert float(err.value.y) == -0.5


def test_families_and_registry():
    assert make_function(3.0).value == 3.0
    a = make_function({"family": "affine", "const": 1.0, "x_coef": [2.0], "hi": 2.0})
    assert float(a(np.array([[5.0]]), np.zeros(1))[0]) == 2.0  # clipped
    b = make_function({"family": "bounded-smooth", "scale": 2.0, "x_coef": [1.0]})
    assert b.bound == pytest.approx(2.0)
    assert abs(float(b(np.array([[100.0]]), np.zeros(1))[0])) <= 2.0
    s = make_function({"family": "signed-power", "coef": -2.0, "exponent": 0.5})
    assert float(s(np.zeros((1, 1)), np.array([-4.0]))[0]) == pytest.approx(4.0)
    with pytest.raises(DomainError, match="unknown coefficient family"):
        make_function({"family": "nope"})
    register_family("twice-const", lambda p: Constant(2 * p["value"]))
    assert make_function({"family": "twice-const", "value": 1.5}).value == 3.0


@pytest.mark.parametrize("fn", [
    Constant([1.0, 2.0]),
    Affine(1.0, [0.5], -0.25, -2.0, 2.0),
    BoundedSmooth(1.5, 0.1, 0.2, [0.3], 0.4),
    SignedPower(-3.0, 0.5, 0.0),
])
def test_family_round_trip(fn):
    assert make_function(fn.to_dict()) == fn


def test_measures():
    mu = AtomicMeasure([0.1, 0.8], [1.0, 2.0])
    assert mu.rate == 3.0
    assert mu.truncated_first_moment(0.5) == pytest.approx(0.1)
    (su, sw), (lu, lw) = mu.discretize(0.5)
    assert su.tolist() == [0.1] and lu.tolist() == [0.8] and lw.tolist() == [2.0]
    assert make_measure(mu.to_dict()).to_dict() == mu.to_dict()
    u = DensityMeasure.uniform(2.0, -1.0, 1.0)
    assert u.rate == 2.0
    assert u.truncated_first_moment(0.5) == pytest.approx(0.0, abs=1e-12)
    marks = u.sample_marks(np.random.default_rng(0), 20000)
    assert np.all(np.abs(marks) <= 1.0)
    assert abs(marks.mean()) < 0.02


# models and validation


def test_repulsive_validation_pass_and_fail():
    ok = validate_model(SmallNoiseModel.constant(0.5, 1.0, 2.0))
    assert ok.passed
    bad = validate_model(SmallNoiseModel.constant(0.5, -1.0, 2.0, regime="repulsive"))
    c = bad["sign-regime"]
    assert not c.passed
    assert c.witness[1] == 0.0  # witness on the hyperplane y = 0
    assert "FAIL sign-regime" in bad.format()


def _linear_fast(diss_exponent):
    return TwoScaleModel(d=1, k=1, slow_drift=0.0 * np.ones(1), slow_diffusion=[[0.0]],
                         fast_drift=Affine(0.0, None, -1.0), fast_diffusion=1.0,
                         diss_exponent=diss_exponent, diss_const=1.0, diss_radius=1.0)


def test_dissipativity_check_reports_inequality_and_margin():
    good = validate_model(_linear_fast(1.0))
    c = good["fast-dissipativity"]
    assert c.passed and c.margin == pytest.approx(0.0, abs=1e-12)
    assert "|y|^2.0" in c.detail
    # declaring a stronger growth than -y provides is rejected with a witness
    bad = validate_model(_linear_fast(2.0))
    c = bad["fast-dissipativity"]
    assert not c.passed and c.margin < 0 and c.witness is not None


def test_cutoff_atom_rejected():
    m = TwoScaleModel(d=1, k=1, slow_drift=[0.0], slow_diffusion=[[0.0]],
                      fast_drift=Affine(0.0, None, -1.0), fast_diffusion=1.0,
                      slow_jump=[1.0], slow_measure=AtomicMeasure([0.5], [1.0]), cutoff=0.5)
    assert not validate_model(m)["cutoff-atoms"].passed


def test_validation_deterministic():
    m = SmallNoiseModel(1, 0.5, [0.5],
                        BoundedSmooth(2.0, 1.0, 0.0, [0.5], 0.0), 1.0, [[0.1]], [0.0])
    g = GridSpec(points=9)
    assert validate_model(m, g) == validate_model(m, g)


def test_model_dict_round_trip():
    from holdersel.config import model_from_dict

    m = SmallNoiseModel.constant(0.3, 4.0, 1.0, 2.0, 0.5, [1.0, 0.0], [0.0, 1.0])
    assert model_from_dict(m.to_dict()) == m


def test_model_shape_errors():
    with pytest.raises(DomainError):
        SmallNoiseModel(2, 0.5, [0.0], 1.0, 1.0, [[0.0]], [0.0])
    with pytest.raises(DomainError):
        SmallNoiseModel.constant(0.5, 1.0, 1.0, regime="sideways")
