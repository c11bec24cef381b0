"""Local linear quantile process at the cutoff, rearrangement and conditional ranks.

The check-loss problem in (intercept, slope) is solved exactly.  Its optimum
is attained at a vertex where the fitted line passes through two data
points; we pivot between vertices, each pivot being an exact 1-D weighted
quantile problem (rotation of the line around one of the two points).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear

from .kernels import CUBIC, KernelSpec, eval_kernel
from .model import ObservationSample


class QuantileError(ValueError):
    pass


def check_loss(z, u: float):
    z = np.asarray(z, float)
    return z * (u - (z < 0))


def weighted_lower_quantile(z, w, level) -> int:
    """Index of the smallest ``z`` whose cumulative weight reaches ``level * sum(w)``.

    ``level`` may be a scalar or a per-point array; for arrays the target is
    ``sum(w * level)`` (used by the rotation line search).
    """
    order = np.argsort(z, kind="stable")
    cw = np.cumsum(w[order])
    target = np.sum(w * level) if np.ndim(level) else level * cw[-1]
    m = np.searchsorted(cw, target - 1e-12 * cw[-1], side="left")
    return int(order[min(m, len(order) - 1)])


def _objective(t, r, w, u, a, b) -> float:
    return float(np.dot(w, check_loss(t - a - b * r, u)))


def _rotate(t, r, w, u, i):
    """Best line through point ``i``; returns (a, b, partner index)."""
    d = r - r[i]
    keep = d != 0
    keep[i] = False
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return t[i], 0.0, i
    dk = d[idx]
    z = (t[idx] - t[i]) / dk
    level = np.where(dk > 0, u, 1.0 - u)
    k = weighted_lower_quantile(z, w[idx] * np.abs(dk), level)
    b = z[k]
    return t[i] - b * r[i], b, int(idx[k])


def _solve_vertex(t, r, w, u, start):
    p, q = start
    if p == q or r[p] == r[q]:
        a, b, q = _rotate(t, r, w, u, p)
        obj = _objective(t, r, w, u, a, b)
    else:
        b = (t[q] - t[p]) / (r[q] - r[p])
        a = t[p] - b * r[p]
        obj = _objective(t, r, w, u, a, b)
    pivot, other = q, p
    fails = 0
    scale = max(1.0, abs(obj))
    for _ in range(20 * len(t) + 10):
        if fails >= 2:
            break
        a2, b2, k = _rotate(t, r, w, u, pivot)
        obj2 = _objective(t, r, w, u, a2, b2)
        if obj2 < obj - 1e-13 * scale and k != pivot:
            a, b, obj = a2, b2, obj2
            other, pivot = pivot, k
            fails = 0
        else:
            fails += 1
            pivot, other = other, pivot
    return a, b, (other, pivot)


def weighted_linear_quantile(t, r_centered, weights, u: float, _start=None):
    """Minimise ``sum_i w_i rho_u(t_i - a - b r_i)`` exactly; returns ``(a, b)``.

    Ties resolve to the smallest minimiser in the degenerate (no r spread)
    case.
    """
    a, b, _ = _weighted_linear_quantile(t, r_centered, weights, u, _start)
    return a, b


def _weighted_linear_quantile(t, r_centered, weights, u, start=None):
    if not 0.0 < u < 1.0:
        raise QuantileError(f"quantile level must lie in (0,1), got {u}")
    t = np.asarray(t, float)
    r = np.asarray(r_centered, float)
    w = np.asarray(weights, float)
    if np.any(w < 0):
        raise QuantileError("weights must be nonnegative")
    pos = w > 0
    if pos.sum() < 3:
        raise QuantileError(f"need at least 3 positive weights, got {int(pos.sum())}")
    t, r, w = t[pos], r[pos], w[pos]
    if np.ptp(r) == 0.0:
        k = weighted_lower_quantile(t, w, u)
        return float(t[k]), 0.0, None
    if start is None:
        k = weighted_lower_quantile(t, w, u)
        start = (k, k)
    a, b, basis = _solve_vertex(t, r, w, u, start)
    return float(a), float(b), basis


def subgradient_certificate(t, r_centered, weights, u, a, b, tol: float = 1e-8) -> bool:
    """True when zero lies in the subdifferential of the check-loss objective at (a, b)."""
    t = np.asarray(t, float)
    r = np.asarray(r_centered, float)
    w = np.asarray(weights, float)
    pos = w > 0
    t, r, w = t[pos], r[pos], w[pos]
    res = t - a - b * r
    scale = max(1.0, float(np.max(np.abs(t))))
    zero = np.abs(res) <= 1e-9 * scale
    X = np.column_stack([np.ones_like(r), r])
    psi = u - (res < 0)
    g = (w[~zero] * psi[~zero]) @ X[~zero]
    if not zero.any():
        return bool(np.all(np.abs(g) <= tol * max(1.0, w.sum())))
    A = (X[zero] * w[zero, None]).T
    sol = lsq_linear(A, -g, bounds=(u - 1.0, u))
    return bool(np.linalg.norm(A @ sol.x + g) <= tol * max(1.0, w.sum()))


@dataclass(frozen=True)
class QuantileCurve:
    side: str
    grid_u: np.ndarray
    values: np.ndarray
    endpoints: tuple[float, float]
    bandwidth: float
    raw_values: Optional[np.ndarray] = None
    rearranged: bool = False
    # local-linear slopes in (r - cutoff) at each grid point, if fitted
    slopes: Optional[np.ndarray] = None

    def __post_init__(self):
        gu = np.asarray(self.grid_u, float)
        v = np.asarray(self.values, float)
        if gu.shape != v.shape or gu.ndim != 1:
            raise QuantileError("grid and values must be 1-D of equal length")
        if np.any(np.diff(gu) <= 0):
            raise QuantileError("quantile grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise QuantileError("non-finite quantile values")

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        u = np.concatenate([[0.0], self.grid_u, [1.0]])
        v = np.concatenate([[self.endpoints[0]], self.values, [self.endpoints[1]]])
        return u, v

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.knots()[1]) >= 0))

    def __call__(self, u):
        return eval_quantile(self, u)


def default_grid_size(n_side: int, b3: float) -> int:
    return max(40, math.ceil(2.0 * (n_side * b3) ** (1.0 / 3.0)))


def fit_quantile_process(sample: ObservationSample, side: str, b3: float,
                         grid_size: Optional[int] = None,
                         kernel: KernelSpec = CUBIC) -> QuantileCurve:
    mask = sample.side_mask(side)
    rc = sample.r[mask] - sample.cutoff
    t = sample.t[mask]
    w = eval_kernel(kernel, rc / b3)
    local = w > 0
    if local.sum() < 20:
        raise QuantileError(f"only {int(local.sum())} observations within b3={b3:.4g} of the cutoff on the {side} side (need 20)")
    if grid_size is None:
        grid_size = default_grid_size(int(mask.sum()), b3)
    if grid_size < 5:
        raise QuantileError("grid_size must be at least 5")
    tl, rl, wl = t[local], rc[local], w[local]
    grid = np.arange(1, grid_size + 1) / (grid_size + 1.0)
    vals = np.empty(grid_size)
    slopes = np.empty(grid_size)
    # sweep outward from the median so each warm start is a nearby vertex
    mid = grid_size // 2
    mid_basis = None
    start = None
    for j in range(mid, grid_size):
        vals[j], slopes[j], start = _weighted_linear_quantile(tl, rl, wl, grid[j], start)
        if j == mid:
            mid_basis = start
    start = mid_basis
    for j in range(mid - 1, -1, -1):
        vals[j], slopes[j], start = _weighted_linear_quantile(tl, rl, wl, grid[j], start)
    return QuantileCurve(side=side, grid_u=grid, values=vals, endpoints=(float(t.min()), float(t.max())),
                         bandwidth=float(b3), raw_values=vals.copy(), slopes=slopes)


def rearrange(curve: QuantileCurve) -> QuantileCurve:
    vals = np.sort(curve.values, kind="stable")
    raw = curve.raw_values if curve.raw_values is not None else curve.values
    return replace(curve, values=vals, raw_values=raw, rearranged=True)


def clip_to_support(curve: QuantileCurve) -> QuantileCurve:
    lo, hi = curve.endpoints
    return replace(curve, values=np.clip(curve.values, lo, hi))


def eval_quantile(curve: QuantileCurve, u):
    u_arr = np.asarray(u, float)
    if np.any((u_arr < 0) | (u_arr > 1)) or not np.all(np.isfinite(u_arr)):
        raise QuantileError("quantile level outside [0,1]")
    ku, kv = curve.knots()
    out = np.interp(u_arr, ku, kv)
    return out if out.ndim else float(out)


def invert_curve(curve: QuantileCurve, t):
    ku, kv = curve.knots()
    if np.any(np.diff(kv) < 0):
        raise QuantileError("curve is not monotone; rearrange and clip before inverting")
    return np.clip(np.interp(np.asarray(t, float), kv, ku, left=0.0, right=1.0), 0.0, 1.0)


def conditional_rank(sample: ObservationSample, below: QuantileCurve, above: QuantileCurve,
                     at_own_r: bool = False) -> np.ndarray:
    """Rank of each T_i under its side's quantile curve.

    By default the curve at the cutoff is inverted.  With ``at_own_r`` the
    local-linear fit is evaluated at each observation's own running variable,
    ``h(r_i, u_j) = value_j + slope_j (r_i - cutoff)``, rearranged per
    observation and then inverted; this targets the rank given R = r_i.
    """
    out = np.empty(sample.n)
    for curve, side in ((below, "below"), (above, "above")):
        m = sample.side_mask(side)
        if not at_own_r:
            out[m] = invert_curve(curve, sample.t[m])
            continue
        if curve.slopes is None:
            raise QuantileError("curve carries no slopes; refit with fit_quantile_process")
        rc = sample.r[m] - sample.cutoff
        raw = curve.raw_values if curve.raw_values is not None else curve.values
        q = np.sort(raw[None, :] + curve.slopes[None, :] * rc[:, None], axis=1)
        lo = np.minimum(curve.endpoints[0], q[:, 0])
        hi = np.maximum(curve.endpoints[1], q[:, -1])
        ku = np.concatenate([[0.0], curve.grid_u, [1.0]])
        qq = np.column_stack([lo, q, hi])
        # row-wise inversion: count of knots at or below T_i, then interpolate
        t = sample.t[m]
        k = np.clip((qq <= t[:, None]).sum(axis=1), 1, len(ku) - 1)
        rows = np.arange(len(t))
        q0, q1 = qq[rows, k - 1], qq[rows, k]
        frac = np.where(q1 > q0, (t - q0) / np.where(q1 > q0, q1 - q0, 1.0), 1.0)
        out[m] = np.clip(ku[k - 1] + frac * (ku[k] - ku[k - 1]), 0.0, 1.0)
    return out


@dataclass(frozen=True)
class SupportEstimate:
    below: tuple[float, float]
    above: tuple[float, float]
    overlap: tuple[float, float]
    overlap_nonempty: bool
    fallback: bool = False

    def union(self) -> tuple[float, float]:
        return min(self.below[0], self.above[0]), max(self.below[1], self.above[1])


def estimate_support(sample: ObservationSample, b3: float) -> SupportEstimate:
    bounds = {}
    fallback = False
    for side in ("below", "above"):
        m = sample.side_mask(side)
        if not m.any():
            raise QuantileError(f"no observations on the {side} side")
        local = m & (np.abs(sample.r - sample.cutoff) <= b3)
        if local.sum() < 20:
            warnings.warn(f"fewer than 20 local observations on the {side} side; using the whole side")
            local = m
            fallback = True
        tt = sample.t[local]
        bounds[side] = (float(tt.min()), float(tt.max()))
    lo = max(bounds["below"][0], bounds["above"][0])
    hi = min(bounds["below"][1], bounds["above"][1])
    return SupportEstimate(bounds["below"], bounds["above"], (lo, hi), lo <= hi, fallback)
