"""Three-step estimator: quantile curves, CDF regressions, criterion minimisation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .cdfreg import CdfEvaluator, llr_cdf
from .criterion import CriterionProblem, WeightSpec
from .kernels import CUBIC, KernelSpec
from .model import ObservationSample, StructuralFamily, validate_monotonicity
from .quantile import (QuantileCurve, QuantileError, SupportEstimate, clip_to_support, estimate_support,
                       fit_quantile_process, rearrange)

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


def power_bandwidths(n: int, constant: float = 2.0, exponent: float = 0.2) -> tuple[float, float, float]:
    b = constant * n ** (-exponent)
    return b, b, b


@dataclass
class EstimationConfig:
    bandwidth_constant: float = 2.0
    bandwidth_exponent: float = 0.2
    # overrides the power rule when given; must map n -> (b1, b2, b3)
    bandwidth_rule: Optional[Callable[[int], tuple]] = None
    quantile_grid_size: Optional[int] = None
    y_grid_size: int = 512
    weights: WeightSpec = field(default_factory=WeightSpec)
    kernel: KernelSpec = CUBIC
    restarts: int = 20
    max_iters: int = 2000
    f_tol: float = 1e-8
    x_tol: float = 1e-6
    start_box: Optional[tuple] = None
    rearrange: bool = True
    seed: int = 0
    min_effective_points: int = 10
    weak_id_value_tol: float = 1e-6
    weak_id_spread: float = 0.25
    covariance: bool = False
    inference_grids: tuple[int, int, int] = (21, 21, 11)

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.bandwidth_constant <= 0:
            raise ValueError("bandwidth constant must be positive")

    def bandwidths(self, n: int) -> tuple[float, float, float]:
        if self.bandwidth_rule is not None:
            bw = tuple(float(b) for b in self.bandwidth_rule(n))
        else:
            bw = power_bandwidths(n, self.bandwidth_constant, self.bandwidth_exponent)
        if len(bw) != 3 or not all(b > 0 for b in bw):
            raise ValueError(f"bandwidth rule must return three positive numbers, got {bw}")
        return bw

    def describe(self) -> dict:
        return {"bandwidth_constant": self.bandwidth_constant, "bandwidth_exponent": self.bandwidth_exponent,
                "custom_bandwidth_rule": self.bandwidth_rule is not None,
                "quantile_grid_size": self.quantile_grid_size, "y_grid_size": self.y_grid_size,
                "e_grid": [float(self.weights.e_grid[0]), float(self.weights.e_grid[-1]), len(self.weights.e_grid)],
                "u_grid_size": len(self.weights.u_grid), "kernel": self.kernel.kind,
                "restarts": self.restarts, "max_iters": self.max_iters, "f_tol": self.f_tol, "x_tol": self.x_tol,
                "rearrange": self.rearrange, "seed": self.seed, "covariance": self.covariance,
                "inference_grids": list(self.inference_grids)}


@dataclass
class EstimateResult:
    gamma_hat: np.ndarray
    criterion_at_min: float
    curves: tuple[QuantileCurve, QuantileCurve]
    support: SupportEstimate
    diagnostics: dict
    n: int
    bandwidths: tuple[float, float, float]
    covariance: Optional[np.ndarray] = None
    inference: Optional[object] = None
    family: Optional[StructuralFamily] = field(default=None, repr=False)
    evaluators: Optional[tuple[CdfEvaluator, CdfEvaluator]] = field(default=None, repr=False)
    problem: Optional[CriterionProblem] = field(default=None, repr=False)
    sample: Optional[ObservationSample] = field(default=None, repr=False)

    def standard_errors(self) -> Optional[np.ndarray]:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _fit_curve(sample, side, b3, config):
    curve = fit_quantile_process(sample, side, b3, config.quantile_grid_size, config.kernel)
    if config.rearrange:
        curve = rearrange(curve)
    return clip_to_support(curve)


def _start_points(family: StructuralFamily, config: EstimationConfig, t_range) -> np.ndarray:
    lo, hi = (np.asarray(b, float) for b in (config.start_box or family.box))
    rng = np.random.default_rng(config.seed)
    starts = []
    tries = 0
    while len(starts) < config.restarts:
        g = rng.uniform(lo, hi)
        tries += 1
        if family.is_monotone(g, t_range) or tries > 1000 * config.restarts:
            starts.append(g)
    return np.array(starts)


def _penalised(problem: CriterionProblem, family: StructuralFamily, t_range, e_range):
    tt = np.linspace(t_range[0], t_range[1], 25)[:, None]
    ee = np.linspace(e_range[0], e_range[1], 9)[None, :]

    def f(g):
        if not family.is_monotone(g, t_range):
            viol = float(np.max(-np.asarray(family.de(g, tt, ee)), initial=0.0))
            return 2.0 + viol
        return problem(g)
    return f


def minimize_criterion(problem, family: StructuralFamily, config: EstimationConfig, t_range, e_range) -> dict:
    """Multi-start bounded Nelder-Mead on the penalised criterion.

    ``problem`` is any callable gamma -> criterion value.  Restarts are
    ranked by (value, restart index), so the result does not depend on the
    order in which they finish.
    """
    f = _penalised(problem, family, t_range, e_range)
    lo, hi = family.box
    bounds = list(zip(lo, hi))
    runs = []
    for k, x0 in enumerate(_start_points(family, config, t_range)):
        res = minimize(f, x0, method="Nelder-Mead", bounds=bounds,
                       options={"maxiter": config.max_iters, "maxfev": 4 * config.max_iters,
                                "fatol": config.f_tol, "xatol": config.x_tol})
        runs.append((float(res.fun), k, np.asarray(res.x, float), bool(res.success)))
    by_index = sorted(runs, key=lambda r: r[1])
    runs.sort(key=lambda r: (r[0], r[1]))
    best_val, best_k, best_x, _ = runs[0]
    if best_val >= 2.0:
        raise EstimationError("no restart reached a parameter satisfying the monotonicity restriction")
    if not any(r[3] for r in runs):
        raise EstimationError("optimizer did not converge in any restart")
    top = runs[:min(5, len(runs))]
    top_x = np.array([r[2] for r in top])
    value_gap = top[-1][0] - top[0][0]
    spread = float(np.max(np.ptp(top_x, axis=0))) if len(top) > 1 else 0.0
    weak = bool(len(top) > 1 and value_gap < config.weak_id_value_tol and spread > config.weak_id_spread)
    if weak:
        log.warning("criterion is nearly flat around its minimum: weak identification suspected")
    return {"gamma": best_x, "value": float(best_val), "best_restart": best_k,
            "restart_values": [r[0] for r in by_index], "restart_converged": [r[3] for r in by_index],
            "top5_value_gap": float(value_gap), "top5_spread": spread, "weak_identification": weak}


def estimate(sample: ObservationSample, family: StructuralFamily,
             config: Optional[EstimationConfig] = None) -> EstimateResult:
    config = config or EstimationConfig()
    started = time.perf_counter()
    b1, b2, b3 = config.bandwidths(sample.n)
    support = estimate_support(sample, b3)
    if not support.overlap_nonempty:
        raise EstimationError("treatment supports on the two sides do not overlap at the cutoff; "
                              "the rank condition on the common support fails")
    curves = (_fit_curve(sample, "below", b3, config), _fit_curve(sample, "above", b3, config))
    evs = tuple(CdfEvaluator(sample, side, b1, b2, config.kernel, config.kernel, config.kernel,
                             min_effective_points=config.min_effective_points) for side in ("below", "above"))
    problem = CriterionProblem(family, curves[0], curves[1], evs[0], evs[1], config.weights,
                               derivatives=False, require_monotone=config.rearrange,
                               y_grid_size=config.y_grid_size)
    t_range = support.union()
    e_range = (float(config.weights.e_grid[0]), float(config.weights.e_grid[-1]))
    fit = minimize_criterion(problem, family, config, t_range, e_range)
    best_x, best_val, best_k = fit["gamma"], fit["value"], fit["best_restart"]
    monotone_ok = validate_monotonicity(family, best_x, t_range, e_range)
    diagnostics = {
        "clamp_violation": max(ev.diagnostics.max_clamp_violation for ev in evs),
        "bandwidth_widenings": sum(ev.diagnostics.widened for ev in evs),
        "ridge_fallbacks": sum(ev.diagnostics.ridge for ev in evs),
        "effective_n": {"below": int(sample.side_mask("below").sum()), "above": int(sample.side_mask("above").sum())},
        "restart_values": fit["restart_values"],
        "restart_converged": fit["restart_converged"],
        "best_restart": best_k,
        "top5_value_gap": fit["top5_value_gap"],
        "top5_spread": fit["top5_spread"],
        "weak_identification": fit["weak_identification"],
        "monotone": bool(monotone_ok),
        "criterion_evaluations": problem.evaluations,
        "curves_monotone_raw": [bool(np.all(np.diff(c.raw_values) >= 0)) for c in curves],
        "seconds": time.perf_counter() - started,
    }
    result = EstimateResult(gamma_hat=best_x, criterion_at_min=float(best_val), curves=curves, support=support,
                            diagnostics=diagnostics, n=sample.n, bandwidths=(b1, b2, b3), family=family,
                            evaluators=evs, problem=problem, sample=sample)
    if config.covariance:
        from .inference import estimate_covariance
        cov = estimate_covariance(result, config.inference_grids)
        result.inference = cov
        result.covariance = cov.vcov
    return result


def _curve_for(result: EstimateResult, side: str) -> QuantileCurve:
    return result.curves[0] if side == "below" else result.curves[1]


def estimate_error_cdf(result: EstimateResult, family: StructuralFamily, cdf_eval: CdfEvaluator,
                       e: float, u: float) -> float:
    """Recovered ``F_{eps|U,R}(e | u, rbar)`` using the curve on ``cdf_eval``'s side."""
    if not 0.0 < u < 1.0:
        raise QuantileError(f"rank must lie in (0,1), got {u}")
    t = float(_curve_for(result, cdf_eval.side)(u))
    y = float(family.eval(result.gamma_hat, t, e))
    return llr_cdf(cdf_eval, y, t)


def _error_masses(cdf_table, family, gamma, h, e_grid):
    y = family.eval(gamma, h[None, :], e_grid[:, None])
    F = np.clip(cdf_table(y), 0.0, 1.0)
    p = np.diff(F, axis=0, prepend=0.0)
    p[-1] += 1.0 - F[-1]
    return p


def estimate_casf(result: EstimateResult, family: StructuralFamily, cdf_eval: CdfEvaluator, t,
                  e_grid: Optional[np.ndarray] = None, u_grid: Optional[np.ndarray] = None):
    """Conditional average structural function at treatment level(s) ``t``."""
    t_arr = np.atleast_1d(np.asarray(t, float))
    lo, hi = result.support.union()
    if np.any((t_arr < lo) | (t_arr > hi)):
        raise QuantileError(f"treatment level outside the estimated support [{lo:.4g}, {hi:.4g}]")
    e_grid = np.linspace(-4.0, 4.0, 801) if e_grid is None else np.asarray(e_grid, float)
    u_grid = np.asarray(result.problem.weights.u_grid if u_grid is None else u_grid, float)
    h = np.asarray(_curve_for(result, cdf_eval.side)(u_grid), float)
    table = cdf_eval.tabulate(h)
    p = _error_masses(table, family, result.gamma_hat, h, e_grid)
    out = np.array([np.sum(family.eval(result.gamma_hat, tv, e_grid)[:, None] * p) / len(u_grid) for tv in t_arr])
    return out if np.ndim(t) else float(out[0])


def marginal_effect_curve(result: EstimateResult, family: StructuralFamily, t_grid, e_levels) -> np.ndarray:
    t = np.asarray(t_grid, float)[:, None]
    e = np.asarray(e_levels, float)[None, :]
    return np.asarray(family.dt(result.gamma_hat, t, e), float) * np.ones((t.shape[0], e.shape[1]))


def average_marginal_effect(result: EstimateResult, family: StructuralFamily, t_grid,
                            e_grid: Optional[np.ndarray] = None) -> np.ndarray:
    """``E[dg/dt (t, eps) | R = rbar]`` under the recovered error law (below side)."""
    e_grid = np.linspace(-4.0, 4.0, 801) if e_grid is None else np.asarray(e_grid, float)
    ev = result.evaluators[0]
    u_grid = result.problem.weights.u_grid
    h = np.asarray(result.curves[0](u_grid), float)
    p = _error_masses(ev.tabulate(h), family, result.gamma_hat, h, e_grid)
    pe = p.sum(axis=1) / len(u_grid)
    return np.array([float(np.dot(family.dt(result.gamma_hat, tv, e_grid), pe))
                     for tv in np.atleast_1d(np.asarray(t_grid, float))])
