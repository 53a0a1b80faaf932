"""Probabilistic surface optimization: magnitude-driven training of neural surfaces
toward log-densities, densities and density ratios."""

from .distributions import (
    DiagGaussian,
    LinearGaussianPairs,
    Mixture1D,
    UniformBox,
    augment_additive_noise,
    columns,
    diag_gaussian,
    diag_gaussian_fit,
    transformed_columns,
    uniform_box,
    uniform_box_fit,
)
from .estimator import PSOConditionalDensity, PSODensityEstimator, PSODensityRatio
from .instances import (
    AuxInfo,
    FeasibilityReport,
    PsoInstance,
    check_feasibility,
    make_deeppdf,
    make_named,
    make_pso_lde,
    make_pso_max,
    wrap_bounded,
    wrap_cut_at,
    wrap_reverse_at,
)
from .network import (
    NetworkSpec,
    NumericFailure,
    Preconditioner,
    SurfaceModel,
    bd_layer_apply,
    forward,
    init_params,
    param_gradient,
    per_sample_gradients,
)
from .trainer import AdamState, MetricsTrace, TrainConfig, adam_step, conditional_batch, lr_at, pso_update_direction, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AuxInfo", "DiagGaussian", "FeasibilityReport", "LinearGaussianPairs", "MetricsTrace",
    "Mixture1D", "NetworkSpec", "NumericFailure", "PSOConditionalDensity", "PSODensityEstimator",
    "PSODensityRatio", "Preconditioner", "PsoInstance", "SurfaceModel", "TrainConfig", "UniformBox",
    "adam_step", "augment_additive_noise", "bd_layer_apply", "check_feasibility", "columns",
    "conditional_batch", "diag_gaussian", "diag_gaussian_fit", "forward", "init_params", "lr_at",
    "make_deeppdf", "make_named", "make_pso_lde", "make_pso_max", "param_gradient",
    "per_sample_gradients", "pso_update_direction", "train", "transformed_columns", "uniform_box",
    "uniform_box_fit", "wrap_bounded", "wrap_cut_at", "wrap_reverse_at",
]
