import numpy as np
import pytest
from hypothesis import given, strategies as st

from frdct.cdfreg import CdfEvaluator
from frdct.criterion import (CriterionProblem, WeightSpec, build_criterion_surface, criterion_value,
                             cumulative_u_integral, default_u_grid)
from frdct.model import LinearModel
from frdct.quantile import clip_to_support, fit_quantile_process, rearrange
from frdct.simulate import AnalyticCdf, DgpConfig, estimation_family, generate_dgp, true_curve

CFG = DgpConfig(n=1000, seed=0)
FAM = estimation_family(CFG)
GSTAR = np.array([1.0, 1.0, 1.0])


@pytest.fixture(scope="module")
def oracle():
    return CriterionProblem(FAM, true_curve(CFG, "below"), true_curve(CFG, "above"),
                            AnalyticCdf(CFG, "below"), AnalyticCdf(CFG, "above"))


@pytest.fixture(scope="module")
def fitted():
    s = generate_dgp(CFG)
    b = 2 * s.n ** -0.2
    curves = [clip_to_support(rearrange(fit_quantile_process(s, side, b))) for side in ("below", "above")]
    evs = [CdfEvaluator(s, side, b, b) for side in ("below", "above")]
    return curves, evs


def test_oracle_truth_is_zero(oracle):
    assert oracle(GSTAR) < 1e-3


def test_oracle_refinement_stable():
    w = WeightSpec().refined(2)
    p = CriterionProblem(FAM, true_curve(CFG, "below"), true_curve(CFG, "above"),
                         AnalyticCdf(CFG, "below"), AnalyticCdf(CFG, "above"), w)
    assert p(GSTAR) < 1e-3


def test_oracle_sphere(oracle):
    rng = np.random.default_rng(1)
    base = oracle(GSTAR)
    for _ in range(20):
        d = rng.normal(size=3)
        assert oracle(GSTAR + 0.5 * d / np.linalg.norm(d)) > base


def test_identical_sides_zero(fitted):
    curves, evs = fitted
    surf = build_criterion_surface(GSTAR, FAM, curves[0], curves[0], evs[0], evs[0])
    assert surf.norm == 0.0 and np.all(surf.values == 0.0)


def test_surface_bounds_and_u_lipschitz(fitted):
    curves, evs = fitted
    surf = build_criterion_surface(np.array([0.3, 1.2, 0.8]), FAM, *curves, *evs)
    u = WeightSpec().u_grid
    assert np.all(np.isfinite(surf.values))
    assert np.all(np.abs(surf.values) <= 1.0)
    assert np.all(np.abs(surf.values[:, 0]) <= u[0] + 1e-12)
    inc = np.abs(np.diff(surf.values, axis=1))
    assert np.all(inc <= np.diff(u)[None, :] + 1e-12)
    assert surf.norm == pytest.approx(criterion_value(np.array([0.3, 1.2, 0.8]), FAM, *curves, *evs))


def test_norm_invariant_to_e_order(fitted):
    curves, evs = fitted
    w = WeightSpec()
    p = CriterionProblem(FAM, *curves, *evs, w)
    vals = p.surface_values(GSTAR)
    perm = np.random.default_rng(2).permutation(vals.shape[0])
    M = w.matrix
    assert np.sqrt(np.sum(vals[perm] ** 2 * M[perm])) == pytest.approx(p.norm_of(vals), rel=1e-14)


def test_continuity_in_gamma(fitted):
    curves, evs = fitted
    p = CriterionProblem(FAM, *curves, *evs)
    rng = np.random.default_rng(3)
    g = np.array([0.5, 1.0, 1.0])
    for _ in range(5):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        L = [abs(p(g + h * d) - p(g)) / h for h in (1e-3, 1e-4)]
        assert np.all(np.isfinite(L)) and max(L) < 10.0
        assert L[0] == pytest.approx(L[1], rel=0.5, abs=1e-3)


def test_weight_spec():
    w = WeightSpec()
    assert w.matrix.sum() == pytest.approx(1.0)
    assert w.raw_mass == pytest.approx(1.0, abs=0.02)
    assert np.all(w.matrix >= 0)
    with pytest.raises(ValueError):
        WeightSpec(u_grid=np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        WeightSpec(e_grid=np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        WeightSpec(e_weight=lambda e: -np.ones_like(e))
    assert len(default_u_grid()) == 101 and default_u_grid()[0] == pytest.approx(0.5 / 101)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=30))
def test_cumulative_integral_of_bounded_integrand(vals):
    v = np.asarray(vals)
    u = default_u_grid(len(v))
    D = cumulative_u_integral(v, u)
    assert np.all(np.abs(D) <= u + 1e-12)
    ones = cumulative_u_integral(np.ones_like(u), u)
    assert ones == pytest.approx(u)


def test_linear_family_identical_law_small_norm():
    rng = np.random.default_rng(4)
    n = 1000
    r, u = rng.uniform(size=n), rng.uniform(size=n)
    t = r + 2 * np.sin(np.pi * u / 2)
    y = t - 0.5 + rng.beta(2, 2, size=n) + r
    from frdct.model import ObservationSample
    s = ObservationSample(y, t, r, 0.5)
    b = 2 * n ** -0.2
    curves = [clip_to_support(rearrange(fit_quantile_process(s, side, b))) for side in ("below", "above")]
    evs = [CdfEvaluator(s, side, b, b) for side in ("below", "above")]
    p = CriterionProblem(LinearModel(0.5, 0.5), *curves, *evs)
    vals = [p(np.array([g])) for g in np.linspace(-2, 4, 13)]
    # no discontinuity: the criterion stays at the noise level over a wide range
    assert max(vals) < 0.1
