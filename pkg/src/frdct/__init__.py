"""Semiparametric estimation of nonseparable models in fuzzy regression
discontinuity designs with a continuous treatment."""

__version__ = "0.1.0"

from .model import (CustomFamily, LinearModel, ModelError, ObservationSample, QuadraticInteractionModel,
                    ShiftedQuadraticModel, StructuralFamily, make_family)
from .kernels import CUBIC, KernelSpec, eval_kernel, integrated_kernel
from .quantile import QuantileCurve, fit_quantile_process, rearrange, conditional_rank, estimate_support
from .cdfreg import CdfEvaluator, llr_cdf, lq_cdf_with_deriv, boundary_density
from .criterion import CriterionProblem, WeightSpec, build_criterion_surface, criterion_value
from .estimator import (EstimateResult, EstimationConfig, EstimationError, estimate, estimate_casf,
                        estimate_error_cdf, average_marginal_effect)
from .inference import CovarianceEstimate, estimate_covariance, linear_hypothesis_test
from .baseline import WaldEstimate, WeakFirstStageError, tsls_wald
from .simulate import DgpConfig, MonteCarloReport, generate_dgp, run_monte_carlo, weak_id_dgp

__all__ = [name for name in dir() if not name.startswith("_")]
