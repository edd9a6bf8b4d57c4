"""Fair regression and classification when the sensitive attribute is latent.

The sensitive attribute is recovered as a posterior over mixture components
fitted to the predictors that carry it, and the downstream model is fitted
under a constraint or penalty that limits its dependence on that posterior.
"""

from .errors import (
    DegenerateFitError,
    FairnessWarning,
    InvalidArgumentError,
    LatentFairError,
    NumericError,
    SchemaError,
    SeparationError,
    TooLargeError,
    UndefinedMetricError,
)
from .fair import (
    FairLinearFit,
    FairLogisticFit,
    OptimizerConfig,
    fit_fair_logistic,
    fit_fair_ls,
    penalty_value,
    residualize,
    tradeoff_curve,
)
from .metrics import accuracy, auc, classification_report, delta_dp, delta_eo, mean_distance
from .mixture import (
    CategoricalMixtureParams,
    EmConfig,
    GaussianMixtureParams,
    HybridMixtureParams,
    MixtureFit,
    fit_categorical_em,
    fit_gaussian_em,
    fit_hybrid_em,
    map_classify,
    posterior_matrix,
)
from .reports import VERSION as __version__
from .screening import ScreeningConfig, screen_predictors
from .simulate import SCENARIOS, Scenario, run_scenario

from types import ModuleType as _Module

__all__ = [n for n, v in dict(globals()).items() if not n.startswith("_") and not isinstance(v, _Module)]
