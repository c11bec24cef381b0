import numpy as np
import pytest
from hypothesis import given, strategies as st

from frdct.model import (CustomFamily, LinearModel, ModelError, ObservationSample, QuadraticInteractionModel,
                         ShiftedQuadraticModel, eval_structural, family_with_normalization, invert_in_error,
                         make_family, marginal_effect, validate_monotonicity)

Q = QuadraticInteractionModel(0.5)
coef = st.floats(-5, 5, allow_nan=False)
unit = st.floats(0, 1, allow_nan=False)
err = st.floats(-4, 4, allow_nan=False)


def test_eval_examples():
    assert eval_structural(Q, (1, 1, 1), 0.5, 0.3) == pytest.approx(0.3, abs=0)
    assert eval_structural(Q, (1, 1, 1), 1.0, 0.0) == pytest.approx(0.75)
    assert eval_structural(Q, (0, 0, 0), 0.8, -0.2) == pytest.approx(-0.2)


def test_eval_errors():
    with pytest.raises(ModelError):
        eval_structural(Q, (1, 1), 0.5, 0.0)
    with pytest.raises(ModelError):
        eval_structural(Q, (1, 1, 1), np.nan, 0.0)


def test_marginal_effect_examples():
    assert marginal_effect(Q, (1, 1, 1), 0.5, 0.4) == pytest.approx(1.4)
    assert marginal_effect(Q, (1, 0, 0), 3.1, -2.0) == pytest.approx(1.0)


def test_invert_examples():
    assert invert_in_error(Q, (1, 1, 1), 0.5, 0.7) == pytest.approx(0.7, abs=1e-10)
    assert invert_in_error(Q, (1, 1, 1), 1.0, 0.75) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ModelError):
        invert_in_error(Q, (1, 1, 1), 1.0, 1e6, (-1, 1))
    with pytest.raises(ModelError):
        invert_in_error(Q, (0, 0, -3), 1.0, 0.0, (-1, 1))


def test_validate_monotonicity_examples():
    assert validate_monotonicity(Q, (1, 1, 1), (0, 1), (-4, 4))
    assert not validate_monotonicity(Q, (0, 0, -3), (0, 1), (-4, 4))
    assert validate_monotonicity(Q, (0, 0, 0), (0, 1), (-4, 4))


@given(coef, coef, coef, err)
def test_normalization_exact(g1, g2, g3, e):
    assert eval_structural(Q, (g1, g2, g3), 0.5, e) == e


@given(coef, coef, coef, unit, err)
def test_grad_and_dt_match_finite_differences(g1, g2, g3, t, e):
    g = np.array([g1, g2, g3])
    h = 1e-5
    for fam in (Q, ShiftedQuadraticModel(0.5, 0.3)):
        grad = fam.grad_gamma(g, t, e)
        for j in range(3):
            d = np.zeros(3)
            d[j] = h
            fd = (fam.eval(g + d, t, e) - fam.eval(g - d, t, e)) / (2 * h)
            assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-6)
        fd_t = (fam.eval(g, t + h, e) - fam.eval(g, t - h, e)) / (2 * h)
        assert marginal_effect(fam, g, t, e) == pytest.approx(fd_t, rel=1e-6, abs=1e-6)
        fd_e = (fam.eval(g, t, e + h) - fam.eval(g, t, e - h)) / (2 * h)
        assert fam.de(g, t, e) == pytest.approx(fd_e, rel=1e-6, abs=1e-6)


@given(coef, coef, st.floats(-1.5, 1.5), unit, st.floats(-3, 3))
def test_invert_round_trip(g1, g2, g3, t, e):
    g = (g1, g2, g3)
    y = float(Q.eval(np.array(g), t, e))
    assert invert_in_error(Q, g, t, y, (-10, 10)) == pytest.approx(e, abs=1e-8)


def test_sample_invariants():
    with pytest.raises(ModelError):
        ObservationSample([1, 2], [1, 2], [0.1, 0.2], 0.5)  # nothing above
    with pytest.raises(ModelError):
        ObservationSample([1, 2], [1], [0.1, 0.9], 0.5)
    with pytest.raises(ModelError):
        ObservationSample([1, np.inf], [1, 2], [0.1, 0.9], 0.5)
    s = ObservationSample([1, 2, 3], [1, 2, 3], [0.1, 0.5, 0.9], 0.5)
    assert s.side_mask("below").tolist() == [True, False, False]


def test_family_helpers():
    assert isinstance(make_family("linear", 0.5), LinearModel)
    with pytest.raises(ModelError):
        make_family("cubic", 0.5)
    f = family_with_normalization(Q, 1.0)
    assert f.eval(np.ones(3), 1.0, 0.25) == 0.25
    lin = LinearModel(0.5, intercept=0.2)
    assert lin.eval(np.array([2.0]), 1.0, 0.1) == pytest.approx(2 * 0.5 + 0.1 + 0.2)
    cf = CustomFamily(1, lambda g, t, e: g[0] * (t - 0.5) + e, lambda g, t, e: np.stack(np.broadcast_arrays(t - 0.5), -1),
                      lambda g, t, e: g[0] + 0 * t, lambda g, t, e: 1 + 0 * t, 0.5, [-1], [1])
    assert cf.eval(np.array([0.3]), 1.5, 0.0) == pytest.approx(0.3)
    with pytest.raises(ModelError):
        CustomFamily(1, None, None, None, None, 0.5, [1], [0])
