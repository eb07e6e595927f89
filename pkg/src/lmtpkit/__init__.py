"""Estimation of longitudinal modified treatment policy effects.

Four estimators (substitution, inverse probability weighting, targeted
minimum loss-based, sequentially doubly robust) over cross-fitted nuisances,
with density ratios estimated by probabilistic classification and inference
from the efficient influence function.
"""

from .crossfit import FoldPlan, crossfit_predict, make_folds, no_crossfit_plan
from .data import (
    DataSchema,
    Design,
    HistoryView,
    LongitudinalData,
    OutcomeScaler,
    design_matrix,
    history_matrix,
    history_view,
    load_longitudinal_csv,
    scale_outcome,
    unscale_estimate,
    write_longitudinal_csv,
)
from .density_ratio import (
    AugmentedDataset,
    RatioEstimates,
    build_augmented,
    estimate_density_ratios,
)
from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    PolicyDomainError,
    PositivityWarning,
)
from .estimators import (
    EstimateResult,
    NuisanceSet,
    eif_values,
    gcomp_sequential,
    ipw_estimate,
    sdr_estimate,
    tilt_step,
    tmle_estimate,
    wald_interval,
)
from .learners import (
    FittedModel,
    LearnerSpec,
    StackWeights,
    cv_stack,
    fit_classifier,
    fit_regressor,
)
from .policy import (
    Policy,
    ShiftedDensity,
    analytic_shifted_density,
    apply_policy,
    check_support,
    shifted_density_ratios,
    shifted_exposures,
)
from .simulation import (
    DgpSpec,
    MetricsRow,
    OracleTheta,
    ScenarioResult,
    ScenarioSpec,
    ToyModel,
    efficiency_bound,
    exact_sigma2,
    exact_theta,
    exhaustive_m,
    exhaustive_remainder,
    exhaustive_theta,
    generate_dataset,
    oracle_theta_mc,
    population_estimates,
    run_scenario,
    toy_phi_conditional,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedDataset",
    "ConfigError",
    "DataError",
    "DataSchema",
    "Design",
    "DgpSpec",
    "EstimateResult",
    "EstimationError",
    "FittedModel",
    "FoldPlan",
    "HistoryView",
    "LearnerSpec",
    "LongitudinalData",
    "MetricsRow",
    "NuisanceSet",
    "OracleTheta",
    "OutcomeScaler",
    "Policy",
    "PolicyDomainError",
    "PositivityWarning",
    "RatioEstimates",
    "ScenarioResult",
    "ScenarioSpec",
    "ShiftedDensity",
    "StackWeights",
    "ToyModel",
    "analytic_shifted_density",
    "apply_policy",
    "build_augmented",
    "check_support",
    "crossfit_predict",
    "cv_stack",
    "design_matrix",
    "efficiency_bound",
    "eif_values",
    "estimate_density_ratios",
    "exact_sigma2",
    "exact_theta",
    "exhaustive_m",
    "exhaustive_remainder",
    "exhaustive_theta",
    "fit_classifier",
    "fit_regressor",
    "gcomp_sequential",
    "generate_dataset",
    "history_matrix",
    "history_view",
    "ipw_estimate",
    "load_longitudinal_csv",
    "make_folds",
    "no_crossfit_plan",
    "oracle_theta_mc",
    "population_estimates",
    "run_scenario",
    "scale_outcome",
    "sdr_estimate",
    "shifted_density_ratios",
    "shifted_exposures",
    "tilt_step",
    "tmle_estimate",
    "toy_phi_conditional",
    "unscale_estimate",
    "wald_interval",
    "write_longitudinal_csv",
]
