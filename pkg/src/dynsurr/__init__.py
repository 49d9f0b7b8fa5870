"""Estimation of long-term causal effects from short-term experiments via
dynamically adjusted surrogate indices."""

from .data_model import (
    FeatureMapKind,
    FeatureMaps,
    FeatureMapSpec,
    PanelDataset,
    PanelSchema,
    PeriodRecord,
    Setting,
    UnitTrajectory,
    cumulative_outcome,
    eval_feature_map,
    load_panel,
    save_panel,
)
from .dgp import (
    AnalyticNuisanceSet,
    LinearDGPParams,
    ResidualMixture,
    SemiSynthConfig,
    adaptive_comparison_params,
    counterfactual_oracle,
    ground_truth_theta,
    perturb_covariance,
    random_linear_params,
    sample_residual,
    semi_synthetic_oracle,
    semi_synthetic_truth,
    simulate_linear,
    simulate_semi_synthetic,
)
from .estimators import EstimatorConfig, EstimatorKind, run_estimator
from .inference import (
    EffectEstimate,
    EstimateReport,
    SandwichCovariance,
    ci_linear,
    effect_ci,
    effect_estimate,
    normal_quantile,
    sandwich,
)
from .learners import (
    LearnerConfig,
    LinearModel,
    LogisticModel,
    fit_lasso_cv,
    fit_logistic,
    fit_ols,
    lasso_kkt_violation,
)
from .nuisance import (
    FoldPair,
    NuisanceSet,
    NuisanceValues,
    fit_nuisance_set,
    predict_nuisances,
    split_halves,
)
from .snmm import (
    MomentSystem,
    ScoreOptions,
    SystemMode,
    ThetaVector,
    adjusted_outcome,
    adjusted_outcomes,
    assemble_from_values,
    assemble_system,
    dynamic_scores,
    recursive_closed_form,
    solve_theta,
    static_scores,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
