"""Empirical identification criterion and its weighted norm.

For a candidate ``gamma``

    D(e, u) = int_0^u [F-(g(h0(v), e) | h0(v)) - F+(g(h1(v), e) | h1(v))] dv

is evaluated on an (e, u) grid.  The u-integral is a cumulative trapezoid
over the u-grid, with the first cell [0, u_1] closed by a rectangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cdfreg import CdfError
from .model import StructuralFamily
from .quantile import QuantileCurve, QuantileError


def _std_normal_pdf(e):
    return np.exp(-0.5 * np.asarray(e, float) ** 2) / np.sqrt(2.0 * np.pi)


def _unit(u):
    return np.ones_like(np.asarray(u, float))


def default_u_grid(m: int = 101) -> np.ndarray:
    return (np.arange(1, m + 1) - 0.5) / m


def default_e_grid(m: int = 41, lo: float = -4.0, hi: float = 4.0) -> np.ndarray:
    return np.linspace(lo, hi, m)


def _cell_widths(x: np.ndarray, lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
    """Voronoi cell lengths of sorted nodes, optionally clipped to [lo, hi]."""
    mid = 0.5 * (x[1:] + x[:-1])
    left = np.concatenate([[x[0] if lo is None else lo], mid])
    right = np.concatenate([mid, [x[-1] if hi is None else hi]])
    return right - left


@dataclass
class WeightSpec:
    u_weight: Callable = _unit
    e_weight: Callable = _std_normal_pdf
    e_grid: np.ndarray = field(default_factory=default_e_grid)
    u_grid: np.ndarray = field(default_factory=default_u_grid)

    def __post_init__(self):
        self.e_grid = np.asarray(self.e_grid, float)
        self.u_grid = np.asarray(self.u_grid, float)
        for name, g in (("e_grid", self.e_grid), ("u_grid", self.u_grid)):
            if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
                raise ValueError(f"{name} must be strictly increasing with at least 2 points")
        if self.u_grid[0] <= 0 or self.u_grid[-1] >= 1:
            raise ValueError("u_grid must lie inside (0,1)")
        we = np.asarray(self.e_weight(self.e_grid), float)
        wu = np.asarray(self.u_weight(self.u_grid), float)
        if np.any(we < 0) or np.any(wu < 0):
            raise ValueError("weights must be nonnegative")
        cell = np.outer(_cell_widths(self.e_grid), _cell_widths(self.u_grid, 0.0, 1.0))
        raw = np.outer(we, wu) * cell
        total = raw.sum()
        if not total > 0:
            raise ValueError("weight has no mass on the grid")
        # the combined weight is renormalised to a probability on the grid
        self.raw_mass = float(total)
        self.matrix = raw / total
        self.matrix.setflags(write=False)

    def refined(self, factor: int = 2) -> "WeightSpec":
        """Same weight functions on grids with ``factor`` times as many points."""
        ne = (len(self.e_grid) - 1) * factor + 1
        return WeightSpec(self.u_weight, self.e_weight,
                          np.linspace(self.e_grid[0], self.e_grid[-1], ne),
                          default_u_grid(len(self.u_grid) * factor))


def cumulative_u_integral(integrand: np.ndarray, u_grid: np.ndarray) -> np.ndarray:
    """``int_0^{u_j}`` along the last axis; the first cell is a rectangle."""
    du = np.diff(u_grid)
    out = np.empty_like(integrand)
    out[..., 0] = u_grid[0] * integrand[..., 0]
    inc = 0.5 * du * (integrand[..., 1:] + integrand[..., :-1])
    out[..., 1:] = out[..., :1] + np.cumsum(inc, axis=-1)
    return out


@dataclass(frozen=True)
class CriterionSurface:
    values: np.ndarray
    gamma: np.ndarray
    norm: float


class CriterionProblem:
    """Nuisances prepared for repeated criterion evaluation.

    ``cdf_below``/``cdf_above`` are objects with ``tabulate(t_nodes)``
    returning a callable on arrays whose last axis indexes the nodes
    (:class:`~frdct.cdfreg.CdfEvaluator` or an analytic stand-in).
    """

    def __init__(self, family: StructuralFamily, below: QuantileCurve, above: QuantileCurve,
                 cdf_below, cdf_above, weights: Optional[WeightSpec] = None, derivatives: bool = False,
                 require_monotone: bool = True, y_grid_size: int = 512):
        self.family = family
        self.weights = weights if weights is not None else WeightSpec()
        for c in (below, above):
            if require_monotone and not c.is_monotone():
                raise QuantileError(f"{c.side} quantile curve is not monotone; rearrange first")
        u = self.weights.u_grid
        self.h0 = np.asarray(below(u), float)
        self.h1 = np.asarray(above(u), float)
        order = 2 if derivatives else 1
        self.tab0 = _tabulate(cdf_below, self.h0, u, "below", order, y_grid_size)
        self.tab1 = _tabulate(cdf_above, self.h1, u, "above", order, y_grid_size)
        self._e = self.weights.e_grid[:, None]
        self.evaluations = 0

    def surface_values(self, gamma) -> np.ndarray:
        gamma = np.asarray(gamma, float)
        g0 = self.family.eval(gamma, self.h0[None, :], self._e)
        g1 = self.family.eval(gamma, self.h1[None, :], self._e)
        integrand = self.tab0(g0) - self.tab1(g1)
        self.evaluations += 1
        return cumulative_u_integral(integrand, self.weights.u_grid)

    def surface(self, gamma) -> CriterionSurface:
        vals = self.surface_values(gamma)
        return CriterionSurface(vals, np.asarray(gamma, float).copy(), self.norm_of(vals))

    def norm_of(self, values: np.ndarray) -> float:
        return float(np.sqrt(np.sum(values * values * self.weights.matrix)))

    def __call__(self, gamma) -> float:
        return self.norm_of(self.surface_values(gamma))


def _tabulate(ev, nodes, u, side, order, n_grid):
    try:
        return ev.tabulate(nodes, order=order, n_grid=n_grid)
    except CdfError as exc:
        # locate the first failing node for the message
        for j, t in enumerate(nodes):
            try:
                ev.tabulate(nodes[j:j + 1])
            except CdfError:
                raise CdfError(f"{side} side CDF failed at u={u[j]:.4g} (t={t:.4g}): {exc}") from exc
        raise


def build_criterion_surface(gamma, family: StructuralFamily, below: QuantileCurve, above: QuantileCurve,
                            cdf_below, cdf_above, weights: Optional[WeightSpec] = None) -> CriterionSurface:
    return CriterionProblem(family, below, above, cdf_below, cdf_above, weights).surface(gamma)


def criterion_value(gamma, family: StructuralFamily, below: QuantileCurve, above: QuantileCurve,
                    cdf_below, cdf_above, weights: Optional[WeightSpec] = None) -> float:
    return build_criterion_surface(gamma, family, below, above, cdf_below, cdf_above, weights).norm
