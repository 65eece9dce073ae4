"""Stagewise kernel density estimation under U-divergences."""

__version__ = "0.1.0"

from .bounds import (
    CurvatureBound, ErrorBoundReport, LogRatioConstants, empirical_fluctuation_sup,
    error_bound_check, kl_curvature_bound, log_ratio_constants, log_ratio_moment_quadrature,
    max_log_ratio_moment,
)
from .density import (
    GaussianWord, IntegratorSpec, MixtureDensity, ScaledDensity, XiCombination, combine_stage,
    cross_integral_row, eval_density, gaussian_cross_integral, integrate, mixture_inner,
)
from .dictionary import BandwidthLadder, Dictionary, build_b1, build_b2, build_dictionary, \
    reference_bandwidth
from .divergence import DivergenceFamily, LossValue, empirical_u_loss, family_eval, u_divergence
from .errors import (
    CoverageError, DegenerateDataError, DomainError, FitError, NumericIntegrityError, SchemaError,
    StageKDEError,
)
from .fitter import (
    CondensationMetrics, FitConfig, StagewiseEstimate, condensation_metrics, fit,
    mixing_coefficients, normalize, stage_loss_probe,
)
from .simulation import RunResult, ScenarioSpec, ise, kde_baseline, load_target, run_scenario, \
    split_sample
