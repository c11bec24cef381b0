"""Wald-ratio (TSLS) benchmark: ratio of outcome and treatment jumps at the cutoff."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import CUBIC, KernelSpec, eval_kernel
from .model import ObservationSample


class BaselineError(ValueError):
    pass


class WeakFirstStageError(BaselineError):
    def __init__(self, msg, means: dict):
        super().__init__(msg)
        self.means = means


@dataclass(frozen=True)
class WaldEstimate:
    value: float
    numerator: float
    denominator: float
    bandwidth: float


def local_linear_boundary_mean(x, r, cutoff: float, side: str, b: float, kernel: KernelSpec = CUBIC) -> float:
    """One-sided local linear intercept of ``x`` on ``r - cutoff`` at the cutoff."""
    x = np.asarray(x, float)
    rc = np.asarray(r, float) - cutoff
    if side == "below":
        keep = rc < 0
    elif side == "above":
        keep = rc >= 0
    else:
        raise BaselineError(f"unknown side {side!r}")
    w = np.where(keep, eval_kernel(kernel, rc / b), 0.0)
    pos = w > 0
    if pos.sum() < 5:
        raise BaselineError(f"only {int(pos.sum())} observations with positive weight on the {side} side (need 5)")
    X = np.column_stack([np.ones(pos.sum()), rc[pos] / b])
    wx = X * w[pos, None]
    G = X.T @ wx
    if np.linalg.cond(G) > 1e12:
        raise BaselineError("singular local linear design")
    coef = np.linalg.solve(G, wx.T @ x[pos])
    return float(coef[0])


def tsls_wald(sample: ObservationSample, b: float, kernel: KernelSpec = CUBIC) -> WaldEstimate:
    means = {}
    for name, v in (("y", sample.y), ("t", sample.t)):
        for side in ("below", "above"):
            means[f"{name}_{side}"] = local_linear_boundary_mean(v, sample.r, sample.cutoff, side, b, kernel)
    num = means["y_above"] - means["y_below"]
    den = means["t_above"] - means["t_below"]
    if abs(den) < 1e-8:
        raise WeakFirstStageError(f"treatment jump {den:.3g} is numerically zero", means)
    return WaldEstimate(num / den, num, den, float(b))
