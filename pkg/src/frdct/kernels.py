"""Compactly supported kernels, their integrals and local-polynomial moment matrices."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

KINDS = ("cubic_smooth", "triangular", "epanechnikov")
SIDES = ("two_sided", "left_only", "right_only")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "cubic_smooth"
    side: str = "two_sided"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported kernel {self.kind!r}; choose from {KINDS}")
        if self.side not in SIDES:
            raise ValueError(f"unsupported kernel side {self.side!r}")

    def with_side(self, side: str) -> "KernelSpec":
        return KernelSpec(self.kind, side)

    def __call__(self, x):
        return eval_kernel(self, x)


CUBIC = KernelSpec()


def _side_mask(side: str, x: np.ndarray) -> np.ndarray:
    if side == "left_only":
        return x < 0
    if side == "right_only":
        return x >= 0
    return np.ones(x.shape, dtype=bool)


def eval_kernel(spec: KernelSpec, x):
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    inside = a <= 1.0
    if spec.kind == "cubic_smooth":
        k = 2.0 * a**3 - 3.0 * a**2 + 1.0
    elif spec.kind == "triangular":
        k = 1.0 - a
    else:
        k = 0.75 * (1.0 - x * x)
    k = np.where(inside & _side_mask(spec.side, x), k, 0.0)
    return k if k.ndim else float(k)


def _two_sided_cdf(kind: str, x: np.ndarray) -> np.ndarray:
    xc = np.clip(x, -1.0, 1.0)
    if kind == "cubic_smooth":
        neg = -0.5 * xc**4 - xc**3 + xc + 0.5
        pos = 0.5 * xc**4 - xc**3 + xc + 0.5
        return np.where(xc < 0, neg, pos)
    if kind == "triangular":
        return np.where(xc < 0, 0.5 * (1.0 + xc) ** 2, 1.0 - 0.5 * (1.0 - xc) ** 2)
    return 0.5 + 0.75 * (xc - xc**3 / 3.0)


def integrated_kernel(spec: KernelSpec, x):
    """``int_{-inf}^x k(v) dv``; one-sided variants integrate to 1/2."""
    x = np.asarray(x, dtype=float)
    F = _two_sided_cdf(spec.kind, x)
    if spec.side == "left_only":
        F = np.minimum(F, 0.5)
    elif spec.side == "right_only":
        F = np.maximum(F - 0.5, 0.0)
    return F if F.ndim else float(F)


def _support(side: str) -> tuple[float, float]:
    return {"two_sided": (-1.0, 1.0), "left_only": (-1.0, 0.0), "right_only": (0.0, 1.0)}[side]


@lru_cache(maxsize=None)
def kernel_moment(kind: str, side: str, power: int) -> float:
    """``int x^power k(x) dx`` over the side's support."""
    spec = KernelSpec(kind, side)
    lo, hi = _support(side)
    # split at 0 so the |x|^3 kink sits on a panel boundary
    pieces = [(lo, min(hi, 0.0)), (max(lo, 0.0), hi)]
    total = 0.0
    for a, b in pieces:
        if b > a:
            val, _ = quad(lambda v: v**power * eval_kernel(spec, v), a, b, epsabs=1e-13, epsrel=1e-12)
            total += val
    return total


def kernel_moment_matrix(spec_t: KernelSpec, spec_r: KernelSpec, side: str = "two_sided") -> np.ndarray:
    """``int (1,x1,x2)(1,x1,x2)' k_T(x1) k_R(x2) 1{x2 in side} dx1 dx2``."""
    return _moment_matrix_cached(spec_t.kind, spec_t.side, spec_r.kind, side if side != "two_sided" else spec_r.side).copy()


@lru_cache(maxsize=None)
def _moment_matrix_cached(kind_t, side_t, kind_r, side_r) -> np.ndarray:
    mt = [kernel_moment(kind_t, side_t, p) for p in range(3)]
    mr = [kernel_moment(kind_r, side_r, p) for p in range(3)]
    # exponents of (x1, x2) for the basis (1, x1, x2)
    pw = [(0, 0), (1, 0), (0, 1)]
    M = np.empty((3, 3))
    for a, (pa1, pa2) in enumerate(pw):
        for b, (pb1, pb2) in enumerate(pw):
            M[a, b] = mt[pa1 + pb1] * mr[pa2 + pb2]
    M.setflags(write=False)
    return M


def local_linear_moments(spec: KernelSpec, side: str) -> np.ndarray:
    """2x2 matrix ``int (1,x)(1,x)' k(x) 1{x in side} dx``."""
    m = [kernel_moment(spec.kind, side, p) for p in range(3)]
    return np.array([[m[0], m[1]], [m[1], m[2]]])


def equivalent_kernel(spec: KernelSpec, side: str, x):
    """One-sided local-linear equivalent kernel ``e1' Omega^{-1} (1, x)' k(x) 1{x in side}``.

    Has unit mass and zero first moment on the half line.
    """
    x = np.asarray(x, float)
    if side == "two_sided":
        return eval_kernel(KernelSpec(spec.kind, "two_sided"), x)
    coef = np.linalg.solve(local_linear_moments(spec, side), np.array([1.0, 0.0]))
    return (coef[0] + coef[1] * x) * eval_kernel(KernelSpec(spec.kind, side), x)
