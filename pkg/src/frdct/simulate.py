"""Simulation designs, analytic nuisances and the Monte Carlo harness.

The base design draws (R, eps, U) from a Gaussian copula with
corr(R, U) = 0, corr(eps, R) = rho_r and corr(eps, U) = rho_u, with
Beta(2,2) errors and uniform ranks.  Treatment is ``h0(R, U)`` below the
cutoff and ``h1(R, U)`` above it.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import betainc, betaincinv, ndtr, ndtri

from .model import ObservationSample, ShiftedQuadraticModel, LinearModel, StructuralFamily
from .quantile import QuantileCurve

log = logging.getLogger(__name__)

GAMMA_STAR = (1.0, 1.0, 1.0)


class SimulationError(RuntimeError):
    pass


# -- treatment and outcome functions (module level so they pickle) -------
def h0_base(r, u):
    return r + 2.0 * np.sin(np.pi * u / 2.0)


def h1_base(r, u):
    return r + 2.0 * u**3


def h0_weak(r, u):
    return betaincinv(0.1, 0.1, u)


def h1_weak(r, u):
    return betaincinv(10.0, 10.0, u)


def g_base(t, r, e, gamma=GAMMA_STAR):
    g1, g2, g3 = gamma
    return g1 * (t - 0.5) + g2 * (t * t - 0.25) + g3 * (t - 0.5) * e + e + r


def g_figure3(t, r, e, gamma=None):
    return t / 2.0 + t * t + e


def g_linear(t, r, e, gamma=(1.0,)):
    return gamma[0] * (t - 0.5) + e + r


def beta22_cdf(e):
    return betainc(2.0, 2.0, np.clip(e, 0.0, 1.0))


def beta22_ppf(p):
    return betaincinv(2.0, 2.0, p)


@dataclass
class DgpConfig:
    n: int = 1000
    r_marginal: str = "uniform01"
    rho_r: float = 0.3
    rho_u: float = 0.3
    gamma_true: tuple = GAMMA_STAR
    cutoff: Optional[float] = None
    h0: Callable = h0_base
    h1: Callable = h1_base
    g_true: Callable = g_base
    eps_marginal: str = "beta22"
    eps_ppf: Optional[Callable] = None
    eps_cdf: Optional[Callable] = None
    seed: int = 0
    name: str = "base"

    def __post_init__(self):
        if self.n < 50:
            raise SimulationError("n must be at least 50")
        if self.r_marginal not in ("uniform01", "standard_normal"):
            raise SimulationError(f"unknown running-variable marginal {self.r_marginal!r}")
        if not self.rho_r**2 + self.rho_u**2 < 1.0:
            raise SimulationError("copula correlation matrix is not positive definite (need rho_r^2 + rho_u^2 < 1)")
        if self.eps_marginal == "custom" and (self.eps_ppf is None or self.eps_cdf is None):
            raise SimulationError("custom error marginal needs eps_ppf and eps_cdf")
        if self.cutoff is None:
            self.cutoff = 0.5 if self.r_marginal == "uniform01" else 0.0
        self.gamma_true = tuple(float(g) for g in self.gamma_true)

    @property
    def corr(self) -> np.ndarray:
        # coordinates ordered (R, eps, U)
        return np.array([[1.0, self.rho_r, 0.0], [self.rho_r, 1.0, self.rho_u], [0.0, self.rho_u, 1.0]])

    def r_cdf(self, r):
        return np.clip(r, 0.0, 1.0) if self.r_marginal == "uniform01" else ndtr(r)

    def r_ppf(self, p):
        return p if self.r_marginal == "uniform01" else ndtri(p)

    def e_cdf(self, e):
        return beta22_cdf(e) if self.eps_marginal == "beta22" else self.eps_cdf(e)

    def e_ppf(self, p):
        return beta22_ppf(p) if self.eps_marginal == "beta22" else self.eps_ppf(p)

    def outcome(self, t, r, e):
        return self.g_true(t, r, e, self.gamma_true)

    def with_(self, **kw) -> "DgpConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return DgpConfig(**d)

    def describe(self) -> dict:
        return {"name": self.name, "n": self.n, "r_marginal": self.r_marginal, "rho_r": self.rho_r,
                "rho_u": self.rho_u, "gamma_true": list(self.gamma_true), "cutoff": self.cutoff,
                "h0": self.h0.__name__, "h1": self.h1.__name__, "g_true": self.g_true.__name__,
                "eps_marginal": self.eps_marginal, "seed": self.seed}


def sample_gaussian_copula(config: DgpConfig):
    """Draw ``(r, eps, u)`` for ``config``; deterministic in ``config.seed``."""
    try:
        L = np.linalg.cholesky(config.corr)
    except np.linalg.LinAlgError as exc:
        raise SimulationError("copula correlation matrix is not positive definite") from exc
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal((config.n, 3)) @ L.T
    p = ndtr(z)
    return config.r_ppf(p[:, 0]), config.e_ppf(p[:, 1]), p[:, 2]


def generate_dgp(config: DgpConfig) -> ObservationSample:
    r, e, u = sample_gaussian_copula(config)
    below = r < config.cutoff
    t = np.where(below, config.h0(r, u), config.h1(r, u))
    y = config.outcome(t, r, e)
    return ObservationSample(y, t, r, config.cutoff)


def base_config(**kw) -> DgpConfig:
    return DgpConfig(**kw)


def weak_id_config(n: int = 1000, seed: int = 0, **kw) -> DgpConfig:
    kw.setdefault("rho_r", 0.3)
    kw.setdefault("rho_u", 0.3)
    return DgpConfig(n=n, seed=seed, h0=h0_weak, h1=h1_weak, g_true=g_linear, gamma_true=(1.0,),
                     name="weak_id", **kw)


def weak_id_dgp(n: int, seed: int = 0) -> ObservationSample:
    return generate_dgp(weak_id_config(n, seed))


def figure3_config(n: int = 1000, seed: int = 0, **kw) -> DgpConfig:
    # truth in the shifted family at tn = 0.5: (0.5, 1, 0) with error eps + 0.5
    return DgpConfig(n=n, seed=seed, g_true=g_figure3, gamma_true=(0.5, 1.0, 0.0), name="figure3", **kw)


def estimation_family(config: DgpConfig) -> StructuralFamily:
    """Family matching the design's structural function at the cutoff."""
    if config.g_true is g_base:
        return ShiftedQuadraticModel(0.5, intercept=config.cutoff)
    if config.g_true is g_figure3:
        return ShiftedQuadraticModel(0.5, intercept=0.0)
    if config.g_true is g_linear:
        return LinearModel(0.5, intercept=config.cutoff)
    raise SimulationError("no default family for a custom structural function")


# -- analytic nuisances --------------------------------------------------
def _side_h(config: DgpConfig, side: str):
    return config.h0 if side == "below" else config.h1


def true_curve(config: DgpConfig, side: str, grid_u: Optional[np.ndarray] = None) -> QuantileCurve:
    grid_u = np.arange(1, 101) / 101.0 if grid_u is None else np.asarray(grid_u, float)
    h = _side_h(config, side)
    rb = config.cutoff
    vals = np.asarray(h(rb, grid_u), float)
    ends = (float(h(rb, 0.0)), float(h(rb, 1.0)))
    return QuantileCurve(side=side, grid_u=grid_u, values=vals, endpoints=ends, bandwidth=0.0)


class AnalyticCdf:
    """True ``F(y | t, rbar)`` on one side of the cutoff for a simulation design.

    Has the same ``tabulate`` interface as :class:`~frdct.cdfreg.CdfEvaluator`.
    """

    def __init__(self, config: DgpConfig, side: str, n_inv: int = 20001):
        self.config = config
        self.side = side
        h = _side_h(config, side)
        self._u = np.linspace(0.0, 1.0, n_inv)
        self._t = np.asarray(h(config.cutoff, self._u), float)
        if np.any(np.diff(self._t) < 0):
            raise SimulationError("treatment function is not strictly increasing in the rank")
        self._mu_r = config.rho_r * ndtri(np.clip(config.r_cdf(config.cutoff), 1e-12, 1 - 1e-12))
        self._sd = math.sqrt(1.0 - config.rho_r**2 - config.rho_u**2)

    def rank(self, t):
        return np.interp(t, self._t, self._u)

    def invert_outcome(self, y, t):
        """Error level solving ``g(t, rbar, e) = y`` (vectorised bisection on the error support)."""
        y, t = np.broadcast_arrays(np.asarray(y, float), np.asarray(t, float))
        lo, hi = np.zeros(y.shape), np.ones(y.shape)
        if self.config.eps_marginal != "beta22":
            lo -= 50.0
            hi += 49.0
        rb = self.config.cutoff
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            up = self.config.outcome(t, rb, mid) < y
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        return 0.5 * (lo + hi)

    def error_cdf(self, e, u):
        pe = np.clip(self.config.e_cdf(e), 0.0, 1.0)
        zu = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
        with np.errstate(divide="ignore"):
            ze = ndtri(pe)
        return ndtr((ze - self._mu_r - self.config.rho_u * zu) / self._sd)

    def cdf_at(self, y, t):
        t = np.asarray(t, float)
        return self.error_cdf(self.invert_outcome(y, t), self.rank(t))

    def tabulate(self, t_nodes, order: int = 1, n_grid: Optional[int] = None) -> "AnalyticTable":
        return AnalyticTable(self, np.asarray(t_nodes, float))

    def density_at(self, y, t, step: float = 1e-5):
        return (self.cdf_at(np.asarray(y) + step, t) - self.cdf_at(np.asarray(y) - step, t)) / (2 * step)


class AnalyticTable:
    def __init__(self, parent: AnalyticCdf, t_nodes):
        self.parent = parent
        self.t_nodes = t_nodes

    def cdf(self, y, axis: int = -1, clamp=None):
        y = np.asarray(y, float)
        if axis != -1:
            y = np.moveaxis(y, axis, -1)
        out = self.parent.cdf_at(y, self.t_nodes)
        return np.moveaxis(out, -1, axis) if axis != -1 else out

    __call__ = cdf

    def dcdf_dt(self, y, axis: int = -1, step: float = 1e-5):
        y = np.asarray(y, float)
        if axis != -1:
            y = np.moveaxis(y, axis, -1)
        p = self.parent
        out = (p.cdf_at(y, self.t_nodes + step) - p.cdf_at(y, self.t_nodes - step)) / (2 * step)
        return np.moveaxis(out, -1, axis) if axis != -1 else out


def conditional_error_mean(config: DgpConfig, n_u: int = 2001, n_e: int = 4001) -> float:
    """``E[eps | R = rbar]`` by quadrature of the copula conditional law."""
    ac = AnalyticCdf(config, "below")
    u = (np.arange(n_u) + 0.5) / n_u
    e = np.linspace(0.0, 1.0, n_e) if config.eps_marginal == "beta22" else np.linspace(-10, 10, n_e)
    F = ac.error_cdf(e[:, None], u[None, :]).mean(axis=1)
    # E[eps] = e_max - int F de for eps supported inside the grid
    return float(e[-1] - np.trapezoid(F, e))


# -- Monte Carlo -----------------------------------------------------------
@dataclass
class MonteCarloReport:
    parameter_names: list
    truth: np.ndarray
    estimates: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    mse: np.ndarray
    failures: int
    wall_time: float
    reps: int
    tsls: Optional[np.ndarray] = None
    tsls_failures: int = 0
    extras: list = field(default_factory=list)
    failure_messages: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @staticmethod
    def summarize(est: np.ndarray, truth: np.ndarray):
        est = np.asarray(est, float)
        m = est.shape[0]
        err = est - truth
        bias = err.mean(axis=0)
        sd = est.std(axis=0, ddof=1) if m > 1 else np.zeros(est.shape[1])
        mse = np.mean(err * err, axis=0)
        return bias, sd, mse

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a, float).tolist()
        return {"parameter_names": self.parameter_names, "truth": arr(self.truth), "bias": arr(self.bias),
                "sd": arr(self.sd), "mse": arr(self.mse), "failures": self.failures, "reps": self.reps,
                "wall_time": self.wall_time, "estimates": arr(self.estimates), "tsls": arr(self.tsls),
                "tsls_failures": self.tsls_failures, "failure_messages": self.failure_messages,
                "extras": self.extras, "config": self.config}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def table_row(self) -> list[float]:
        row = []
        for k in range(len(self.parameter_names)):
            row += [float(self.bias[k]), float(self.sd[k]), float(self.mse[k])]
        return row

    def table_header(self) -> list[str]:
        return [f"{p}_{s}" for p in self.parameter_names for s in ("bias", "sd", "mse")]


def _replicate(k: int, config: DgpConfig, estimators: tuple, est_config, family, me_quantiles):
    from .baseline import WeakFirstStageError, tsls_wald
    from .estimator import average_marginal_effect, estimate

    cfg = config.with_(seed=int(config.seed) + k)
    sample = generate_dgp(cfg)
    out = {"index": k, "seed": cfg.seed}
    if "semiparametric" in estimators:
        try:
            res = estimate(sample, family, est_config)
            out["gamma"] = res.gamma_hat.tolist()
            out["criterion"] = res.criterion_at_min
            out["weak_identification"] = res.diagnostics["weak_identification"]
            if res.covariance is not None:
                out["vcov"] = res.covariance.tolist()
                out["psd"] = bool(np.min(np.linalg.eigvalsh(res.covariance)) >= -1e-12)
                from .inference import linear_hypothesis_test
                d = len(res.gamma_hat)
                stat, dof, p = linear_hypothesis_test(res, np.eye(d), np.asarray(cfg.gamma_true[:d]))
                out["wald_stat"], out["wald_p"] = stat, p
            if me_quantiles is not None:
                tq = np.quantile(sample.t, me_quantiles)
                out["me_t"] = tq.tolist()
                out["me_semiparametric"] = average_marginal_effect(res, family, tq).tolist()
        except Exception as exc:  # counted as a failed replication
            out["error"] = f"{type(exc).__name__}: {exc}"
    if "tsls" in estimators:
        b = est_config.bandwidths(sample.n)[0]
        try:
            out["tsls"] = tsls_wald(sample, b).value
        except WeakFirstStageError as exc:
            out["tsls_error"] = str(exc)
    return out


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("FRDCT_JOBS", "1")))
    except ValueError:
        return 1


def run_monte_carlo(config: DgpConfig, reps: int, estimators: Sequence[str] = ("semiparametric", "tsls"),
                    parallelism: Optional[int] = None, est_config=None, family: Optional[StructuralFamily] = None,
                    me_quantiles: Optional[Sequence[float]] = None, max_failure_rate: float = 0.10,
                    progress: Optional[Callable[[int], None]] = None) -> MonteCarloReport:
    from .estimator import EstimationConfig

    if reps < 10:
        raise SimulationError("reps must be at least 10")
    unknown = set(estimators) - {"semiparametric", "tsls"}
    if unknown:
        raise SimulationError(f"unknown estimators {sorted(unknown)}")
    est_config = est_config or EstimationConfig()
    family = family or estimation_family(config)
    jobs = parallelism or default_jobs()
    started = time.perf_counter()
    work = partial(_replicate, config=config, estimators=tuple(estimators), est_config=est_config,
                   family=family, me_quantiles=None if me_quantiles is None else tuple(me_quantiles))
    if jobs == 1:
        outs = []
        for k in range(reps):
            outs.append(work(k))
            if progress:
                progress(k)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(work, range(reps), chunksize=1))
    outs.sort(key=lambda o: o["index"])
    wall = time.perf_counter() - started
    sp = "semiparametric" in estimators
    ok = [o for o in outs if "gamma" in o] if sp else []
    failures = sum(1 for o in outs if "error" in o)
    d = family.dim
    truth = np.asarray(config.gamma_true[:d], float)
    names = [f"gamma{j + 1}" for j in range(d)]
    est = np.array([o["gamma"] for o in ok]).reshape(-1, d)
    tsls = np.array([o.get("tsls", np.nan) for o in outs]) if "tsls" in estimators else None
    tsls_fail = sum(1 for o in outs if "tsls_error" in o)
    if est.shape[0]:
        bias, sd, mse = MonteCarloReport.summarize(est, truth)
    else:
        bias = sd = mse = np.full(d, np.nan)
    extras = [{k: v for k, v in o.items() if k not in ("gamma",)} for o in outs]
    report = MonteCarloReport(names, truth, est, bias, sd, mse, failures, wall, reps, tsls, tsls_fail,
                              extras, [o["error"] for o in outs if "error" in o],
                              {"dgp": config.describe(), "estimation": est_config.describe(),
                               "family": family.describe(), "estimators": list(estimators)})
    if sp and failures > max_failure_rate * reps:
        raise MonteCarloAbort(report)
    return report


class MonteCarloAbort(SimulationError):
    def __init__(self, report: MonteCarloReport):
        super().__init__(f"{report.failures} of {report.reps} replications failed; first: "
                         f"{report.failure_messages[:1]}")
        self.report = report
