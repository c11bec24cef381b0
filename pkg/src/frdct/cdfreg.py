"""One-sided local polynomial regression of the smoothed outcome CDF on (T, R).

``F(y | t, rbar)`` is the intercept of a kernel-weighted least-squares fit of
``K_Y((y - Y_i)/b2)`` on ``(1, T_i - t, R_i - rbar)`` (plus squares for the
local quadratic variant) using observations on one side of the cutoff.

The fit is linear in the responses, so for a fixed ``t`` the estimate is
``sum_i l_i(t) K_Y((y - Y_i)/b2)``.  :meth:`CdfEvaluator.tabulate` exploits
this: weights ``l(t)`` are computed once per treatment node and the CDF is
tabulated on a fine y-grid with its exact y-derivative, then read back by
cubic Hermite interpolation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import CUBIC, KernelSpec, equivalent_kernel, eval_kernel, integrated_kernel
from .model import ObservationSample

log = logging.getLogger(__name__)

WIDEN_FACTOR = 1.5
COND_LIMIT = 1e10
RIDGE = 1e-8


class CdfError(RuntimeError):
    pass


@dataclass
class CdfDiagnostics:
    widened: int = 0
    ridge: int = 0
    max_clamp_violation: float = 0.0

    def as_dict(self) -> dict:
        return {"widened": self.widened, "ridge": self.ridge, "max_clamp_violation": self.max_clamp_violation}


@dataclass
class CdfEvaluator:
    sample: ObservationSample
    side: str
    b1: float
    b2: float
    kernel_t: KernelSpec = CUBIC
    kernel_r: KernelSpec = CUBIC
    kernel_y: KernelSpec = CUBIC
    clamp: bool = True
    min_effective_points: int = 10
    diagnostics: CdfDiagnostics = field(default_factory=CdfDiagnostics)

    def __post_init__(self):
        if not (self.b1 > 0 and self.b2 > 0):
            raise CdfError("bandwidths must be positive")
        if not 0.01 <= self.b1 / self.b2 <= 100:
            raise CdfError(f"b1/b2 = {self.b1 / self.b2:.3g} is not bounded; use comparable bandwidths")
        m = self.sample.side_mask(self.side)
        self._t = self.sample.t[m]
        self._rc = self.sample.r[m] - self.sample.cutoff
        self._y = self.sample.y[m]
        self._wr = eval_kernel(self.kernel_r, self._rc / self.b1)

    def equivalent_weights(self, t: float, order: int = 1):
        """``(idx, l0, lT)``: weights giving the intercept and the T-slope."""
        min_pts = self.min_effective_points if order == 1 else max(self.min_effective_points, 15)
        b1 = self.b1
        for attempt in range(2):
            wr = self._wr if attempt == 0 else eval_kernel(self.kernel_r, self._rc / b1)
            w = eval_kernel(self.kernel_t, (self._t - t) / b1) * wr
            idx = np.flatnonzero(w > 0)
            if idx.size >= min_pts:
                break
            if attempt == 0:
                self.diagnostics.widened += 1
                b1 = b1 * WIDEN_FACTOR
        else:
            raise CdfError(f"only {idx.size} observations with positive weight at t={t:.4g} on the {self.side} side "
                           f"after widening b1 to {b1:.4g} (need {min_pts})")
        dt = (self._t[idx] - t) / b1
        dr = self._rc[idx] / b1
        cols = [np.ones_like(dt), dt, dr]
        if order == 2:
            cols += [dt * dt, dr * dr]
        X = np.column_stack(cols)
        wx = X * w[idx, None]
        G = X.T @ wx
        if np.linalg.cond(G) > COND_LIMIT:
            self.diagnostics.ridge += 1
            G = G + RIDGE * np.trace(G) * np.eye(G.shape[0])
        # rows of G^{-1} X'W for the intercept and the (scaled) T coefficient
        E = np.zeros((G.shape[0], 2))
        E[0, 0] = 1.0
        E[1, 1] = 1.0
        coef = np.linalg.solve(G, E).T @ wx.T
        return idx, coef[0], coef[1] / b1

    def _response(self, y, idx):
        return integrated_kernel(self.kernel_y, (np.asarray(y, float)[..., None] - self._y[idx]) / self.b2)

    def _clamp(self, v):
        if not self.clamp:
            return v
        viol = float(np.max(np.maximum(v - 1.0, -v), initial=0.0))
        if viol > self.diagnostics.max_clamp_violation:
            self.diagnostics.max_clamp_violation = viol
        return np.clip(v, 0.0, 1.0)

    def cdf(self, y, t):
        """Vectorised local linear estimate at broadcast (y, t) pairs."""
        y, t = np.broadcast_arrays(np.asarray(y, float), np.asarray(t, float))
        out = np.empty(y.shape)
        flat_t = t.ravel()
        flat_y = y.ravel()
        res = out.reshape(-1)
        for tv in np.unique(flat_t):
            sel = flat_t == tv
            idx, l0, _ = self.equivalent_weights(float(tv), 1)
            res[sel] = self._response(flat_y[sel], idx) @ l0
        return self._clamp(out)

    def tabulate(self, t_nodes, order: int = 1, n_grid: int = 512) -> "NodeTable":
        t_nodes = np.asarray(t_nodes, float)
        J = len(t_nodes)
        n_side = len(self._y)
        L0 = np.zeros((n_side, J))
        LT = np.zeros((n_side, J)) if order == 2 else None
        for j, tv in enumerate(t_nodes):
            idx, l0, lt = self.equivalent_weights(float(tv), order)
            L0[idx, j] = l0
            if order == 2:
                LT[idx, j] = lt
        lo = float(self._y.min()) - self.b2
        hi = float(self._y.max()) + self.b2
        grid = np.linspace(lo, hi, n_grid)
        z = (grid[:, None] - self._y[None, :]) / self.b2
        K = integrated_kernel(self.kernel_y, z)
        k = eval_kernel(self.kernel_y, z) / self.b2
        F = K @ L0
        dF = k @ L0
        FT = K @ LT if order == 2 else None
        dFT = k @ LT if order == 2 else None
        return NodeTable(t_nodes, grid, F, dF, FT, dFT, self.clamp, self.diagnostics)


class NodeTable:
    """CDF estimates at fixed treatment nodes, tabulated in y.

    Calling with ``y`` of shape (J, ...) or (..., J) evaluates node ``j`` at
    the entries of column/row ``j`` (see ``axis``).
    """

    def __init__(self, t_nodes, grid, F, dF, FT=None, dFT=None, clamp=True, diagnostics=None):
        self.t_nodes = t_nodes
        self.grid = grid
        self.h = grid[1] - grid[0]
        self.F, self.dF, self.FT, self.dFT = F, dF, FT, dFT
        self.clamp = clamp
        self.diagnostics = diagnostics
        self._J = F.shape[1]
        self._cols = np.arange(self._J)

    def _interp(self, V, dV, y, axis):
        y = np.asarray(y, float)
        if axis != -1:
            y = np.moveaxis(y, axis, -1)
        if y.shape[-1] != self._J:
            raise ValueError(f"node axis has length {y.shape[-1]}, table has {self._J} nodes")
        G = len(self.grid)
        pos = (np.clip(y, self.grid[0], self.grid[-1]) - self.grid[0]) / self.h
        i = np.minimum(pos.astype(np.intp), G - 2)
        s = pos - i
        flat = i * self._J + self._cols
        Vf, dVf = V.ravel(), dV.ravel()
        s2 = s * s
        s3 = s2 * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        out = (h00 * Vf[flat] + h01 * Vf[flat + self._J]
               + self.h * (h10 * dVf[flat] + h11 * dVf[flat + self._J]))
        if axis != -1:
            out = np.moveaxis(out, -1, axis)
        return out

    def cdf(self, y, axis: int = -1, clamp: Optional[bool] = None):
        v = self._interp(self.F, self.dF, y, axis)
        if self.clamp if clamp is None else clamp:
            if self.diagnostics is not None:
                viol = float(np.max(np.maximum(v - 1.0, -v), initial=0.0))
                self.diagnostics.max_clamp_violation = max(self.diagnostics.max_clamp_violation, viol)
            v = np.clip(v, 0.0, 1.0)
        return v

    __call__ = cdf

    def dcdf_dt(self, y, axis: int = -1):
        if self.FT is None:
            raise ValueError("table was built without the local quadratic T-derivative")
        return self._interp(self.FT, self.dFT, y, axis)


def llr_cdf(ev: CdfEvaluator, y: float, t: float) -> float:
    idx, l0, _ = ev.equivalent_weights(float(t), 1)
    return float(ev._clamp(np.array(ev._response(y, idx) @ l0)))


def lq_cdf_with_deriv(ev: CdfEvaluator, y: float, t: float) -> tuple[float, float]:
    idx, l0, lt = ev.equivalent_weights(float(t), 2)
    resp = ev._response(y, idx)
    return float(ev._clamp(np.array(resp @ l0))), float(resp @ lt)


def _side_kernel(side: str) -> str:
    return "left_only" if side == "below" else "right_only"


def boundary_density(sample: ObservationSample, side: str, b: float, y, t,
                     kernel: KernelSpec = CUBIC):
    """Estimate of the one-sided joint density of (Y, T, R) at ``(y, t, rbar)``.

    The R-direction uses the one-sided local-linear equivalent kernel so the
    estimate is first-order boundary corrected; Y and T use ordinary kernels.
    """
    if not b > 0:
        raise CdfError("density bandwidth must be positive")
    m = sample.side_mask(side)
    if not m.any():
        raise CdfError(f"no data on the {side} side")
    kr = equivalent_kernel(kernel, _side_kernel(side), (sample.r[m] - sample.cutoff) / b)
    Y, T = sample.y[m], sample.t[m]
    y, t = np.broadcast_arrays(np.asarray(y, float), np.asarray(t, float))
    ky = eval_kernel(kernel, (Y - y[..., None]) / b)
    kt = eval_kernel(kernel, (T - t[..., None]) / b)
    out = (ky * kt) @ kr / (sample.n * b**3)
    return out if out.ndim else float(out)


def boundary_density_tr(sample: ObservationSample, side: str, b: float, t, kernel: KernelSpec = CUBIC):
    """One-sided joint density of (T, R) at ``(t, rbar)`` (the y-integral of :func:`boundary_density`)."""
    m = sample.side_mask(side)
    kr = equivalent_kernel(kernel, _side_kernel(side), (sample.r[m] - sample.cutoff) / b)
    t = np.asarray(t, float)
    kt = eval_kernel(kernel, (sample.t[m] - t[..., None]) / b)
    out = kt @ kr / (sample.n * b**2)
    return out if out.ndim else float(out)


def boundary_density_r(sample: ObservationSample, side: str, b: float, kernel: KernelSpec = CUBIC) -> float:
    m = sample.side_mask(side)
    kr = equivalent_kernel(kernel, _side_kernel(side), (sample.r[m] - sample.cutoff) / b)
    return float(kr.sum() / (sample.n * b))
