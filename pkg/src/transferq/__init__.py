"""Out-of-domain transfer error: forecast intervals, robustness and inference."""

__version__ = "0.1.0"

from .concentration import bound_B, bound_terms, mean_ci, quantile_ci
from .core import MSE, RMSE, DomainSample, Lottery, LossSpec, MetaData, Observation, sample_error, validate_metadata
from .errors import FitError, IngestError, RuleEvaluationError, TensorError, TransferQError
from .intervals import ForecastInterval, WeightedEmpirical, coverage_level, coverage_upper_bound, forecast_interval
from .io import ingest
from .metareg import build_ratio_dataset, fit_ratio_predictor, sample_features
from .shift import (
    domain_weights,
    everywhere_dominates,
    gamma_level,
    weighted_forecast_interval,
    worst_case_curve,
    worst_case_dominates,
    worst_case_upper_bound,
)
from .synthetic import SyntheticMetaSpec, simulate_coverage, simulate_metadata
from .transfer import MeasureKind, MeasureSpec, TransferErrorTensor, kfold_cv_error, pooled_transfer_errors

__all__ = [
    "DomainSample",
    "FitError",
    "ForecastInterval",
    "IngestError",
    "Lottery",
    "LossSpec",
    "MSE",
    "MeasureKind",
    "MeasureSpec",
    "MetaData",
    "Observation",
    "RMSE",
    "RuleEvaluationError",
    "SyntheticMetaSpec",
    "TensorError",
    "TransferErrorTensor",
    "TransferQError",
    "WeightedEmpirical",
    "bound_B",
    "bound_terms",
    "build_ratio_dataset",
    "coverage_level",
    "coverage_upper_bound",
    "domain_weights",
    "everywhere_dominates",
    "fit_ratio_predictor",
    "forecast_interval",
    "gamma_level",
    "ingest",
    "kfold_cv_error",
    "mean_ci",
    "pooled_transfer_errors",
    "quantile_ci",
    "sample_error",
    "sample_features",
    "simulate_coverage",
    "simulate_metadata",
    "validate_metadata",
    "weighted_forecast_interval",
    "worst_case_curve",
    "worst_case_dominates",
    "worst_case_upper_bound",
]
