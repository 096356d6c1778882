"""Bounds between contrastive and mean-supervised losses, with exact and
Monte Carlo loss evaluation, verification suites and a synthetic experiment."""

__version__ = "0.1.0"

from .bounds import (
    BoundParams,
    BoundsReport,
    bounds_report,
    ci_relaxed_deltas,
    competitor_bounds,
    delta_lower,
    delta_upper,
    essential_bounds,
    feasible_region_contains,
    info_nce_value,
)
from .core_math import (
    ClassPrior,
    DomainError,
    UnsupportedConfiguration,
    collision_prob,
    coupon_collector_prob,
    entropy,
    expected_log_col_plus_one,
    harmonic,
    log_cosh,
    log_sum_exp,
)
from .dataset import LabeledDataset, coarse_grain
from .losses import (
    BudgetExceeded,
    FeatureMap,
    LossEstimate,
    MeanClassifier,
    build_mean_classifier,
    contrastive_loss_exact,
    contrastive_loss_mc,
    mean_supervised_loss,
)
from .probe import linear_probe

__all__ = [
    "BoundParams", "BoundsReport", "BudgetExceeded", "ClassPrior", "DomainError", "FeatureMap",
    "LabeledDataset", "LossEstimate", "MeanClassifier", "UnsupportedConfiguration", "__version__",
    "bounds_report", "build_mean_classifier", "ci_relaxed_deltas", "coarse_grain", "collision_prob",
    "competitor_bounds", "contrastive_loss_exact", "contrastive_loss_mc", "coupon_collector_prob",
    "delta_lower", "delta_upper", "entropy", "essential_bounds", "expected_log_col_plus_one",
    "feasible_region_contains", "harmonic", "info_nce_value", "linear_probe", "log_cosh",
    "log_sum_exp", "mean_supervised_loss",
]
