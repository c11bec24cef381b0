import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from frdct.model import ObservationSample
from frdct.quantile import (QuantileCurve, QuantileError, check_loss, clip_to_support, conditional_rank,
                            estimate_support, eval_quantile, fit_quantile_process, invert_curve, rearrange,
                            subgradient_certificate, weighted_linear_quantile)
from frdct.simulate import DgpConfig, generate_dgp


def _curve(vals, lo=0.0, hi=1.0):
    vals = np.asarray(vals, float)
    grid = np.arange(1, len(vals) + 1) / (len(vals) + 1)
    return QuantileCurve("below", grid, vals, (lo, hi), 0.1, raw_values=vals)


def _lp_objective(t, r, w, u):
    # reference optimum: min sum w (u p + (1-u) m) with t - a - b r = p - m
    n = len(t)
    c = np.concatenate([[0, 0], u * w, (1 - u) * w])
    A = np.hstack([np.column_stack([np.ones(n), r]), np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * 2 + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=t, bounds=bounds, method="highs")
    return res.fun


def test_median_when_no_r_spread():
    t = np.array([0.3, 0.9, 0.1, 0.5, 0.7])
    a, b = weighted_linear_quantile(t, np.zeros(5), np.ones(5), 0.5)
    assert a == 0.5 and b == 0.0


def test_lower_quantile_convention():
    a, _ = weighted_linear_quantile([1, 2, 3, 4, 5], np.zeros(5), np.ones(5), 0.2)
    assert a == 1.0


def test_errors():
    with pytest.raises(QuantileError):
        weighted_linear_quantile([1, 2, 3], [0, 1, 2], [1, 1, 0], 0.5)
    with pytest.raises(QuantileError):
        weighted_linear_quantile([1, 2, 3], [0, 1, 2], [1, 1, 1], 1.0)


@given(st.integers(6, 60), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_exact_solution_and_certificate(n, u, seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=n)
    r = rng.uniform(-1, 1, size=n)
    w = rng.uniform(0.1, 1.0, size=n)
    a, b = weighted_linear_quantile(t, r, w, u)
    obj = float(np.dot(w, check_loss(t - a - b * r, u)))
    assert obj <= _lp_objective(t, r, w, u) + 1e-9
    assert subgradient_certificate(t, r, w, u, a, b)


def test_fit_recovers_uniform_quantiles():
    rng = np.random.default_rng(3)
    n = 2000
    r = rng.uniform(size=n)
    t = rng.uniform(size=n)
    s = ObservationSample(t.copy(), t, r, 0.5)
    c = fit_quantile_process(s, "above", 0.5)
    assert np.max(np.abs(c.values - c.grid_u)) < 0.1
    assert c(0.0) == s.t[s.side_mask("above")].min()
    assert c(1.0) == s.t[s.side_mask("above")].max()


def test_fit_weighted_median_oracle():
    vals = np.linspace(0.1, 0.9, 9)
    t = np.tile(vals, 30)
    r = np.linspace(0.5, 0.99, t.size)
    s = ObservationSample(t, t, np.concatenate([[0.1], r[1:]]), 0.5)
    c = fit_quantile_process(s, "above", 0.5, grid_size=5)
    # T is independent of R with ties, so the local line is flat at the median
    assert c(0.5) == pytest.approx(0.5, abs=1e-8)


def test_fit_needs_local_data():
    s = ObservationSample(np.arange(30.0), np.arange(30.0), np.r_[np.linspace(0, 0.4, 25), np.linspace(0.6, 1, 5)], 0.5)
    with pytest.raises(QuantileError):
        fit_quantile_process(s, "above", 0.5)


def test_rearrange_examples():
    c = _curve([3, 1, 2], 0, 4)
    assert rearrange(c).values.tolist() == [1, 2, 3]
    m = _curve([1, 2, 3], 0, 4)
    assert rearrange(m).values.tolist() == m.values.tolist()


@given(arrays(float, st.integers(2, 30), elements=st.floats(-10, 10)))
def test_rearrange_idempotent_and_permutation(v):
    c = _curve(v, -11, 11)
    once = rearrange(c)
    assert np.array_equal(rearrange(once).values, once.values)
    assert sorted(v.tolist()) == once.values.tolist()
    assert once.is_monotone()


@given(arrays(float, st.integers(2, 20), elements=st.floats(-10, 10)), st.integers(0, 1000))
def test_rearrangement_moves_toward_monotone_targets(v, seed):
    target = np.sort(np.random.default_rng(seed).normal(size=v.size) * 5)
    assert np.linalg.norm(np.sort(v) - target) <= np.linalg.norm(v - target) + 1e-9


def test_eval_quantile_interpolation():
    c = _curve([0.2, 0.4, 0.8], 0.0, 1.0)
    for uj, vj in zip(c.grid_u, c.values):
        assert c(uj) == vj
    mid = 0.5 * (c.grid_u[1] + c.grid_u[2])
    assert c(mid) == pytest.approx(0.6)
    u = np.linspace(0, 1, 1001)
    assert np.all(np.diff(eval_quantile(c, u)) >= 0)
    with pytest.raises(QuantileError):
        c(1.2)


@given(arrays(float, st.integers(2, 20), elements=st.floats(-10, 10)), st.floats(0, 1))
def test_eval_continuous(v, u):
    c = rearrange(_curve(v, -11, 11))
    h = 1e-9
    assert abs(c(min(u + h, 1.0)) - c(max(u - h, 0.0))) < 1e-5


def test_conditional_rank_examples():
    c = _curve([0.2, 0.5, 0.8], 0.0, 1.0)
    s = ObservationSample([0, 0, 0, 0], [0.5, -3.0, 0.5, 7.0], [0.1, 0.2, 0.7, 0.8], 0.5)
    U = conditional_rank(s, c, c)
    assert U[0] == pytest.approx(0.5) and U[1] == 0.0 and U[3] == 1.0
    with pytest.raises(QuantileError):
        conditional_rank(s, _curve([0.8, 0.2, 0.5]), c)


def test_conditional_rank_uniform_on_simulated_data():
    s = generate_dgp(DgpConfig(n=2000, seed=5))
    b = 2 * 2000 ** -0.2
    curves = [clip_to_support(rearrange(fit_quantile_process(s, side, b))) for side in ("below", "above")]
    U = conditional_rank(s, *curves, at_own_r=True)
    assert np.all((U >= 0) & (U <= 1))
    grid = np.sort(U)
    ks = np.max(np.abs(np.arange(1, U.size + 1) / U.size - grid))
    assert ks < 0.05


def test_support_examples():
    rng = np.random.default_rng(0)
    r = rng.uniform(size=400)
    t = np.where(r < 0.5, rng.uniform(0, 1, 400), rng.uniform(0.5, 1.5, 400))
    sup = estimate_support(ObservationSample(t, t, r, 0.5), 0.5)
    assert sup.overlap_nonempty
    assert sup.overlap[0] == pytest.approx(0.5, abs=0.02) and sup.overlap[1] == pytest.approx(1.0, abs=0.02)
    t2 = np.where(r < 0.5, t, t + 5)
    assert not estimate_support(ObservationSample(t2, t2, r, 0.5), 0.5).overlap_nonempty


def test_support_base_dgp():
    s = generate_dgp(DgpConfig(n=4000, seed=1))
    sup = estimate_support(s, 0.1)
    for lo, hi in (sup.below, sup.above):
        assert lo == pytest.approx(0.5, abs=0.15) and hi == pytest.approx(2.5, abs=0.15)


def test_invert_requires_monotone():
    with pytest.raises(QuantileError):
        invert_curve(_curve([0.8, 0.2, 0.5]), 0.3)
