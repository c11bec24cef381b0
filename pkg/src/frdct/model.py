"""Observation container and parametric structural-function families.

A family maps a parameter vector ``gamma`` to a function ``g(t, e)`` that is
evaluated at the cutoff of the running variable.  Every method is vectorised
over ``t`` and ``e`` through numpy broadcasting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq


class ModelError(ValueError):
    pass


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservationSample:
    """Outcome ``y``, treatment ``t`` and running variable ``r`` with the cutoff."""

    y: np.ndarray
    t: np.ndarray
    r: np.ndarray
    cutoff: float

    def __post_init__(self):
        y, t, r = (np.ravel(np.asarray(v, dtype=float)) for v in (self.y, self.t, self.r))
        if not (len(y) == len(t) == len(r)) or len(y) == 0:
            raise ModelError(f"y, t, r must have equal positive length, got {len(y)}, {len(t)}, {len(r)}")
        for name, v in (("y", y), ("t", t), ("r", r)):
            if not np.all(np.isfinite(v)):
                raise ModelError(f"non-finite values in {name}")
        if not np.isfinite(self.cutoff):
            raise ModelError("cutoff must be finite")
        below = r < self.cutoff
        if below.all() or not below.any():
            raise ModelError("need at least one observation on each side of the cutoff")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "r", _frozen(r))
        object.__setattr__(self, "cutoff", float(self.cutoff))

    @property
    def n(self) -> int:
        return len(self.y)

    def side_mask(self, side: str) -> np.ndarray:
        if side == "below":
            return self.r < self.cutoff
        if side == "above":
            return self.r >= self.cutoff
        raise ModelError(f"unknown side {side!r}")


class StructuralFamily:
    """Base class: a parametric family ``gamma -> g_gamma(t, rbar, e)``.

    Subclasses provide ``eval``, ``grad_gamma`` (trailing axis of length
    ``dim``), ``dt`` and ``de``.  ``lower``/``upper`` bound the compact
    parameter box.
    """

    dim: int
    normalization_point: float
    lower: np.ndarray
    upper: np.ndarray
    name: str = "family"

    def eval(self, gamma, t, e):
        raise NotImplementedError

    def grad_gamma(self, gamma, t, e):
        raise NotImplementedError

    def dt(self, gamma, t, e):
        raise NotImplementedError

    def de(self, gamma, t, e):
        raise NotImplementedError

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def _check_box(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ModelError("box bounds must have length dim")
        if not np.all(lo < hi):
            raise ModelError("box lower bound must be below upper bound componentwise")

    def in_box(self, gamma) -> bool:
        g = np.asarray(gamma, float)
        return bool(np.all(g >= self.lower) and np.all(g <= self.upper))

    def is_monotone(self, gamma, t_range) -> bool:
        """Cheap monotonicity check over a treatment range (override when closed form exists)."""
        return validate_monotonicity(self, gamma, t_range, (-4.0, 4.0))

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "normalization_point": self.normalization_point,
                "lower": list(map(float, self.lower)), "upper": list(map(float, self.upper))}


class QuadraticInteractionModel(StructuralFamily):
    """``g(t, e) = g1 (t - tn) + g2 (t - tn)^2 + g3 (t - tn) e + e``."""

    name = "quadratic"

    def __init__(self, normalization_point: float = 0.5, lower=None, upper=None):
        self.dim = 3
        self.normalization_point = float(normalization_point)
        self.lower = _frozen(lower if lower is not None else [-5.0] * 3)
        self.upper = _frozen(upper if upper is not None else [5.0] * 3)
        self._check_box()

    def eval(self, gamma, t, e):
        g1, g2, g3 = gamma
        d = np.asarray(t, float) - self.normalization_point
        e = np.asarray(e, float)
        return g1 * d + g2 * d * d + g3 * d * e + e

    def grad_gamma(self, gamma, t, e):
        d = np.asarray(t, float) - self.normalization_point
        d, e = np.broadcast_arrays(d, np.asarray(e, float))
        return np.stack([d, d * d, d * e], axis=-1)

    def dt(self, gamma, t, e):
        g1, g2, g3 = gamma
        d = np.asarray(t, float) - self.normalization_point
        return g1 + 2.0 * g2 * d + g3 * np.asarray(e, float)

    def de(self, gamma, t, e):
        d = np.asarray(t, float) - self.normalization_point
        return np.broadcast_to(gamma[2] * d + 1.0, np.broadcast(d, np.asarray(e)).shape)

    def is_monotone(self, gamma, t_range) -> bool:
        # the e-derivative is affine in t, so the endpoints decide
        d = np.asarray(t_range, float) - self.normalization_point
        return bool(np.all(gamma[2] * d + 1.0 > 0))


class ShiftedQuadraticModel(StructuralFamily):
    """Quadratic family written as in the simulation design.

    ``g(t, e) = g1 (t - tn) + g2 (t^2 - tn^2) + g3 (t - tn) e + e + intercept``

    ``intercept`` is a known constant, e.g. an additive running-variable term
    evaluated at the cutoff.  At ``t = tn`` the family reduces to
    ``e + intercept`` for every parameter value.
    """

    name = "shifted_quadratic"

    def __init__(self, normalization_point: float = 0.5, intercept: float = 0.0, lower=None, upper=None):
        self.dim = 3
        self.normalization_point = float(normalization_point)
        self.intercept = float(intercept)
        self.lower = _frozen(lower if lower is not None else [-5.0] * 3)
        self.upper = _frozen(upper if upper is not None else [5.0] * 3)
        self._check_box()

    def eval(self, gamma, t, e):
        g1, g2, g3 = gamma
        t = np.asarray(t, float)
        tn = self.normalization_point
        d = t - tn
        e = np.asarray(e, float)
        return g1 * d + g2 * (t * t - tn * tn) + g3 * d * e + e + self.intercept

    def grad_gamma(self, gamma, t, e):
        t = np.asarray(t, float)
        tn = self.normalization_point
        t, e = np.broadcast_arrays(t, np.asarray(e, float))
        d = t - tn
        return np.stack([d, t * t - tn * tn, d * e], axis=-1)

    def dt(self, gamma, t, e):
        g1, g2, g3 = gamma
        return g1 + 2.0 * g2 * np.asarray(t, float) + g3 * np.asarray(e, float)

    def de(self, gamma, t, e):
        d = np.asarray(t, float) - self.normalization_point
        return np.broadcast_to(gamma[2] * d + 1.0, np.broadcast(d, np.asarray(e)).shape)

    def is_monotone(self, gamma, t_range) -> bool:
        d = np.asarray(t_range, float) - self.normalization_point
        return bool(np.all(gamma[2] * d + 1.0 > 0))

    def describe(self) -> dict:
        out = super().describe()
        out["intercept"] = self.intercept
        return out


class LinearModel(StructuralFamily):
    """``g(t, e) = g1 (t - tn) + e + intercept``."""

    name = "linear"

    def __init__(self, normalization_point: float = 0.5, intercept: float = 0.0, lower=None, upper=None):
        self.dim = 1
        self.normalization_point = float(normalization_point)
        self.intercept = float(intercept)
        self.lower = _frozen(lower if lower is not None else [-5.0])
        self.upper = _frozen(upper if upper is not None else [5.0])
        self._check_box()

    def eval(self, gamma, t, e):
        return gamma[0] * (np.asarray(t, float) - self.normalization_point) + np.asarray(e, float) + self.intercept

    def grad_gamma(self, gamma, t, e):
        d, _ = np.broadcast_arrays(np.asarray(t, float) - self.normalization_point, np.asarray(e, float))
        return d[..., None]

    def dt(self, gamma, t, e):
        t, e = np.broadcast_arrays(np.asarray(t, float), np.asarray(e, float))
        return np.full(t.shape, float(gamma[0]))

    def de(self, gamma, t, e):
        t, e = np.broadcast_arrays(np.asarray(t, float), np.asarray(e, float))
        return np.ones(t.shape)

    def is_monotone(self, gamma, t_range) -> bool:
        return True

    def describe(self) -> dict:
        out = super().describe()
        out["intercept"] = self.intercept
        return out


@dataclass(frozen=True)
class CustomFamily(StructuralFamily):
    """User-supplied family: callables plus analytic derivatives.

    Each callable takes ``(gamma, t, e)`` and must broadcast over ``t``/``e``;
    ``grad_gamma`` returns an array with a trailing axis of length ``dim``.
    """

    dim: int
    eval_fn: Callable
    grad_fn: Callable
    dt_fn: Callable
    de_fn: Callable
    normalization_point: float
    lower: np.ndarray
    upper: np.ndarray
    name: str = field(default="custom")

    def __post_init__(self):
        object.__setattr__(self, "lower", _frozen(self.lower))
        object.__setattr__(self, "upper", _frozen(self.upper))
        self._check_box()

    def eval(self, gamma, t, e):
        return self.eval_fn(gamma, t, e)

    def grad_gamma(self, gamma, t, e):
        return self.grad_fn(gamma, t, e)

    def dt(self, gamma, t, e):
        return self.dt_fn(gamma, t, e)

    def de(self, gamma, t, e):
        return self.de_fn(gamma, t, e)


def _check_args(family: StructuralFamily, gamma, *scalars) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (family.dim,):
        raise ModelError(f"parameter has shape {gamma.shape}, family expects ({family.dim},)")
    if not np.all(np.isfinite(gamma)):
        raise ModelError("non-finite parameter")
    for v in scalars:
        if not np.all(np.isfinite(v)):
            raise ModelError("non-finite input")
    return gamma


def eval_structural(family: StructuralFamily, gamma, t, e):
    gamma = _check_args(family, gamma, t, e)
    return family.eval(gamma, t, e)


def marginal_effect(family: StructuralFamily, gamma, t, e):
    """Derivative of the structural function with respect to the treatment."""
    gamma = _check_args(family, gamma, t, e)
    return family.dt(gamma, t, e)


def invert_in_error(family: StructuralFamily, gamma, t: float, y: float,
                    e_bracket: tuple[float, float] = (-50.0, 50.0)) -> float:
    """Solve ``g(t, e) = y`` for ``e`` inside ``e_bracket``."""
    gamma = _check_args(family, gamma, t, y)
    lo, hi = map(float, e_bracket)
    grid = np.linspace(lo, hi, 201)
    vals = np.asarray(family.eval(gamma, t, grid), float)
    if np.any(np.diff(vals) <= 0):
        raise ModelError(f"family is not strictly increasing in e on [{lo}, {hi}] at t={t}")
    if not vals[0] <= y <= vals[-1]:
        raise ModelError(f"y={y} outside the image [{vals[0]}, {vals[-1]}] of the bracket")
    if y == vals[0]:
        return lo
    if y == vals[-1]:
        return hi
    f = lambda e: float(family.eval(gamma, t, e)) - y
    root = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(root)


def validate_monotonicity(family: StructuralFamily, gamma, t_range, e_range, n_grid: int = 50) -> bool:
    """True iff ``dg/de > 0`` on an ``n_grid x n_grid`` grid over the two ranges."""
    gamma = np.asarray(gamma, float)
    tg = np.linspace(t_range[0], t_range[1], n_grid)
    eg = np.linspace(e_range[0], e_range[1], n_grid)
    tt, ee = np.meshgrid(tg, eg, indexing="ij")
    return bool(np.all(np.asarray(family.de(gamma, tt, ee)) > 0))


def make_family(name: str, normalization_point: float, intercept: float = 0.0,
                lower=None, upper=None) -> StructuralFamily:
    if name == "quadratic":
        return QuadraticInteractionModel(normalization_point, lower, upper)
    if name == "shifted_quadratic":
        return ShiftedQuadraticModel(normalization_point, intercept, lower, upper)
    if name == "linear":
        return LinearModel(normalization_point, intercept, lower, upper)
    raise ModelError(f"unknown family {name!r}")


def family_with_normalization(family: StructuralFamily, normalization_point: Optional[float]) -> StructuralFamily:
    """Copy of a built-in family with a different normalization point."""
    if normalization_point is None:
        return family
    kw = dict(lower=family.lower, upper=family.upper)
    if isinstance(family, QuadraticInteractionModel):
        return QuadraticInteractionModel(normalization_point, **kw)
    if isinstance(family, ShiftedQuadraticModel):
        return ShiftedQuadraticModel(normalization_point, family.intercept, **kw)
    if isinstance(family, LinearModel):
        return LinearModel(normalization_point, family.intercept, **kw)
    raise ModelError("cannot re-normalize a custom family")
