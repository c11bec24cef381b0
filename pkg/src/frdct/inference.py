"""Plug-in asymptotic covariance and chi-square tests for the criterion estimator.

With ``W`` the (normalised) criterion weights on the (e, u) grid,

    Delta = sum W grad D grad D'
    vcov  = Delta^{-1} (Sigma_- + Sigma_+) Delta^{-1} / (n b1)

where ``Sigma_-`` integrates the squared influence function of one side over
(y, t, r~) against the boundary density of (Y, T, R) at the cutoff.  The
influence function has a distribution-regression part

    a(r~) 1{t <= h(u)} (1{y <= g(t, e)} - F(g(t, e) | t))

and a first-step quantile part ``kq(r~) int_0^u phi(e, v) q(t; v) dv``.
Both factor into a function of r~ times a function of (y, t), so the r~
integral reduces to three scalar kernel moments.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaincc

from .cdfreg import boundary_density, boundary_density_r
from .criterion import WeightSpec, cumulative_u_integral
from .kernels import CUBIC, KernelSpec, equivalent_kernel, eval_kernel, kernel_moment_matrix
from .model import StructuralFamily
from .quantile import QuantileCurve

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-6


class InferenceError(RuntimeError):
    pass


@dataclass
class CovarianceEstimate:
    delta_hat: np.ndarray
    sigma_minus: np.ndarray
    sigma_plus: np.ndarray
    vcov: np.ndarray
    grids: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def vcov_unscaled(self) -> np.ndarray:
        """``Delta^{-1} (Sigma_- + Sigma_+) Delta^{-1}`` (asymptotic variance of sqrt(n b1) gamma_hat)."""
        return self.vcov * self.grids["n"] * self.grids["b1"]


def _side_kernel(side: str) -> str:
    return "left_only" if side == "below" else "right_only"


def _density_table(table, y, step: float):
    """Conditional density by central differences of the clamped CDF."""
    return (table(y + step) - table(y - step)) / (2.0 * step)


def gradient_surface(gamma, family: StructuralFamily, curves: Sequence[QuantileCurve], evaluators,
                     weights: WeightSpec, step: float, tables=None) -> np.ndarray:
    """``grad_gamma D(e, u)`` on the weight grid; shape (E, U, d)."""
    u = weights.u_grid
    e = weights.e_grid[:, None]
    total = 0.0
    for sign, curve, ev, k in ((1.0, curves[0], evaluators[0], 0), (-1.0, curves[1], evaluators[1], 1)):
        h = np.asarray(curve(u), float)
        tab = tables[k] if tables is not None else ev.tabulate(h)
        y = family.eval(gamma, h[None, :], e)
        dens = np.clip(_density_table(tab, y, step), 0.0, None)
        grad = np.asarray(family.grad_gamma(gamma, h[None, :], e), float)
        total = total + sign * dens[..., None] * grad
    # integrate over v along the u axis
    return np.moveaxis(cumulative_u_integral(np.moveaxis(total, -1, 0), u), 0, -1)


def delta_from_gradient(grad: np.ndarray, weights: WeightSpec) -> np.ndarray:
    W = weights.matrix[..., None, None]
    D = np.sum(W * grad[..., :, None] * grad[..., None, :], axis=(0, 1))
    return 0.5 * (D + D.T)


def _check_delta(D: np.ndarray) -> None:
    if not np.all(np.isfinite(D)) or np.max(np.abs(D)) == 0.0:
        raise InferenceError("Delta is zero: the criterion gradient vanishes")
    if np.linalg.cond(D) > 1e12:
        raise InferenceError(f"Delta is singular (condition number {np.linalg.cond(D):.3g})")
    if np.min(np.linalg.eigvalsh(D)) <= 0:
        raise InferenceError("Delta is not positive definite")


def estimate_delta(result, family: StructuralFamily, evaluators=None, weights: Optional[WeightSpec] = None,
                   step: Optional[float] = None) -> np.ndarray:
    evaluators = evaluators if evaluators is not None else result.evaluators
    weights = weights if weights is not None else result.problem.weights
    step = step if step is not None else result.bandwidths[1] / 2.0
    grad = gradient_surface(result.gamma_hat, family, result.curves, evaluators, weights, step)
    D = delta_from_gradient(grad, weights)
    _check_delta(D)
    return D


def sparsity_density(curve: QuantileCurve, u, span: float = 0.05) -> np.ndarray:
    """``f_{T|R}(h(u) | rbar) = 1 / h'(u)`` by a symmetric difference quotient of the quantile curve."""
    u = np.asarray(u, float)
    lo = np.clip(u - span, 0.0, 1.0)
    hi = np.clip(u + span, 0.0, 1.0)
    dh = np.asarray(curve(hi), float) - np.asarray(curve(lo), float)
    with np.errstate(divide="ignore"):
        return np.where(dh > 0, (hi - lo) / np.where(dh > 0, dh, 1.0), np.inf)


def _r_moments(kernel: KernelSpec, side: str, n_r: int):
    """Integrals over r~ of a^2, a kq and kq^2 (before dividing a by f_R)."""
    lo, hi = (-1.0, 0.0) if side == "below" else (0.0, 1.0)
    x, wq = np.polynomial.legendre.leggauss(n_r)
    r = lo + (x + 1.0) * (hi - lo) / 2.0
    wq = wq * (hi - lo) / 2.0
    omega = kernel_moment_matrix(kernel, kernel, _side_kernel(side))
    coef = np.linalg.solve(omega, np.array([1.0, 0.0, 0.0]))
    a = (coef[0] + coef[2] * r) * eval_kernel(KernelSpec(kernel.kind, _side_kernel(side)), r)
    kq = equivalent_kernel(kernel, _side_kernel(side), r)
    return float(wq @ (a * a)), float(wq @ (a * kq)), float(wq @ (kq * kq))


def _sigma_side(result, family: StructuralFamily, side: str, grad: np.ndarray, weights: WeightSpec,
                grids: tuple[int, int, int], step: float, f_r: float, kernel: KernelSpec, diag: dict) -> np.ndarray:
    n_y, n_t, n_r = grids
    sample = result.sample
    b1 = result.bandwidths[0]
    k = 0 if side == "below" else 1
    ev = result.evaluators[k]
    curve = result.curves[k]
    gamma = result.gamma_hat
    u = weights.u_grid
    e = weights.e_grid
    W = weights.matrix

    m = sample.side_mask(side) & (np.abs(sample.r - sample.cutoff) <= b1)
    if m.sum() < 10:
        m = sample.side_mask(side)
    y_lo, y_hi = np.quantile(sample.y[m], [0.005, 0.995])
    y_grid = np.linspace(y_lo, y_hi, n_y)
    t_lo, t_hi = curve.endpoints
    t_grid = np.linspace(t_lo, t_hi, n_t)
    cy = np.full(n_y, (y_hi - y_lo) / (n_y - 1))
    cy[[0, -1]] *= 0.5
    ct = np.full(n_t, (t_hi - t_lo) / (n_t - 1))
    ct[[0, -1]] *= 0.5

    h = np.asarray(curve(u), float)
    # -- distribution-regression part A(y, t) ------------------------------
    tab_t = ev.tabulate(t_grid)
    g_te = family.eval(gamma, t_grid[None, :], e[:, None])            # (E, T)
    F_te = tab_t(g_te)                                                 # (E, T)
    ind_tu = (t_grid[:, None] <= h[None, :]).astype(float)            # (T, U)
    # C[t, e, :] = sum_u W(e,u) grad(e,u) 1{t <= h(u)}
    WG = W[..., None] * grad                                           # (E, U, d)
    C = np.einsum("tu,eud->ted", ind_tu, WG)
    resid = (y_grid[:, None, None] <= g_te.T[None, :, :]).astype(float) - F_te.T[None, :, :]  # (Y, T, E)
    A = np.einsum("yte,ted->ytd", resid, C)

    # -- quantile part B(t) ----------------------------------------------
    tab_q = ev.tabulate(h, order=2)
    y_eu = family.eval(gamma, h[None, :], e[:, None])                  # (E, U)
    dens = np.clip(_density_table(tab_q, y_eu, step), 0.0, None)
    phi = dens * family.dt(gamma, h[None, :], e[:, None]) + tab_q.dcdf_dt(y_eu)
    f_tr = f_r * sparsity_density(curve, u)
    low = f_tr < DENSITY_FLOOR
    diag[f"{side}_f_tr_floored"] = int(low.sum())
    f_tr = np.maximum(f_tr, DENSITY_FLOOR)
    q = (u[None, :] - (t_grid[:, None] <= h[None, :])) / f_tr[None, :]   # (T, U)
    integrand = phi[None, :, :] * q[:, None, :]                         # (T, E, U)
    inner = cumulative_u_integral(integrand, u)
    B = np.einsum("teu,eud->td", inner, WG)

    # -- outer integral ---------------------------------------------------
    f_ytr = np.asarray(boundary_density(sample, side, b1, y_grid[:, None], t_grid[None, :], kernel), float)
    neg = f_ytr < 0
    diag[f"{side}_density_clipped"] = int(neg.sum())
    f_ytr = np.where(neg, 0.0, f_ytr)
    mass = f_ytr * cy[:, None] * ct[None, :]
    m_aa, m_ab, m_bb = _r_moments(kernel, side, n_r)
    m_aa /= f_r * f_r
    m_ab /= f_r
    AA = np.einsum("yt,ytd,yte->de", mass, A, A)
    AB = np.einsum("yt,ytd,te->de", mass, A, B)
    BB = np.einsum("yt,td,te->de", mass, B, B)
    S = m_aa * AA + m_ab * (AB + AB.T) + m_bb * BB
    return 0.5 * (S + S.T)


def _clip_psd(S: np.ndarray, name: str, diag: dict) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    worst = float(vals.min())
    if worst < -1e-10 * max(1.0, float(np.abs(vals).max())):
        log.warning("%s has a negative eigenvalue %.3g; clipped to zero", name, worst)
    diag[f"{name}_clip"] = max(0.0, -worst)
    S = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return 0.5 * (S + S.T)


def estimate_sigmas(result, family: StructuralFamily, evaluators=None, weights: Optional[WeightSpec] = None,
                    grids: tuple[int, int, int] = (21, 21, 11), kernel: KernelSpec = CUBIC,
                    diagnostics: Optional[dict] = None):
    weights = weights if weights is not None else result.problem.weights
    if evaluators is not None:
        result.evaluators = tuple(evaluators)
    step = result.bandwidths[1] / 2.0
    diag = diagnostics if diagnostics is not None else {}
    grad = gradient_surface(result.gamma_hat, family, result.curves, result.evaluators, weights, step)
    b1 = result.bandwidths[0]
    f_r = 0.5 * sum(boundary_density_r(result.sample, s, b1, kernel) for s in ("below", "above"))
    if f_r < DENSITY_FLOOR:
        diag["f_r_floored"] = True
        f_r = DENSITY_FLOOR
    out = []
    for side, name in (("below", "sigma_minus"), ("above", "sigma_plus")):
        S = _sigma_side(result, family, side, grad, weights, grids, step, f_r, kernel, diag)
        out.append(_clip_psd(S, name, diag))
    return out[0], out[1]


def estimate_covariance(result, grids: tuple[int, int, int] = (21, 21, 11),
                        weights: Optional[WeightSpec] = None) -> CovarianceEstimate:
    family = result.family
    weights = weights if weights is not None else result.problem.weights
    diag: dict = {}
    D = estimate_delta(result, family, result.evaluators, weights)
    Sm, Sp = estimate_sigmas(result, family, None, weights, grids, diagnostics=diag)
    Dinv = np.linalg.inv(D)
    n, b1 = result.n, result.bandwidths[0]
    V = Dinv @ (Sm + Sp) @ Dinv / (n * b1)
    V = _clip_psd(0.5 * (V + V.T), "vcov", diag)
    return CovarianceEstimate(D, Sm, Sp, V, {"y": grids[0], "t": grids[1], "r": grids[2],
                                             "e": len(weights.e_grid), "u": len(weights.u_grid),
                                             "n": n, "b1": b1}, diag)


def chi2_sf(stat: float, dof: int) -> float:
    return float(gammaincc(dof / 2.0, max(stat, 0.0) / 2.0))


def linear_hypothesis_test(result, H, eta) -> tuple[float, int, float]:
    """Wald statistic for ``H gamma = eta`` using the plug-in covariance."""
    if result.covariance is None:
        raise InferenceError("result has no covariance; estimate with covariance=True")
    H = np.atleast_2d(np.asarray(H, float))
    eta = np.atleast_1d(np.asarray(eta, float))
    d = len(result.gamma_hat)
    if H.shape[1] != d or eta.shape != (H.shape[0],):
        raise InferenceError(f"H must be (k, {d}) and eta length k")
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise InferenceError("H is not of full row rank")
    M = H @ result.covariance @ H.T
    if np.linalg.cond(M) > 1e14:
        raise InferenceError("H vcov H' is singular")
    diff = H @ result.gamma_hat - eta
    stat = float(max(diff @ np.linalg.solve(M, diff), 0.0))
    dof = H.shape[0]
    return stat, dof, chi2_sf(stat, dof)
