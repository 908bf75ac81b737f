"""Conformal prediction sets for stacked regression ensembles.

Fits a small library of regression learners, estimates simplex stacking
weights by cross validation and non-negative least squares, builds a
conformal interval per learner (sample splitting or full refitting), and
combines the intervals by weighted majority vote. A Monte Carlo harness
measures empirical coverage on synthetic scenarios, and a CSV runner
applies the same pipeline to a data file.
"""

from .aggregate import (
    PredictionSet,
    aggregate_intersection,
    aggregate_union,
    aggregate_wta,
    weighted_majority_vote,
)
from .conformal import (
    CalibrationScores,
    ConformalConfig,
    Interval,
    conformal_quantile,
    full_conformal_interval,
    split_conformal_interval,
)
from .ensemble import (
    CvPredictionMatrix,
    WeightVector,
    cv_predictions,
    empirical_risk,
    nnls,
    sl_point_prediction,
    solve_simplex_weights,
)
from .errors import (
    ConfigError,
    CslError,
    DataError,
    EmptyAcceptedSetError,
    NumericalError,
    SingularDesignError,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    ReplicateRecord,
    emit_report,
    run_csv,
    run_simulation,
)
from .learners import (
    LEARNER_KINDS,
    Dataset,
    LearnerSpec,
    fit_forest,
    fit_knn,
    fit_lasso,
    fit_learner,
    fit_locscale,
    fit_ols,
    nonconformity_score,
)
from .simgen import SCENARIOS, ScenarioConfig, generate, to_csv, true_interval

__version__ = "0.1.0"

__all__ = [
    "CalibrationScores",
    "ConfigError",
    "ConformalConfig",
    "CslError",
    "CvPredictionMatrix",
    "DataError",
    "Dataset",
    "EmptyAcceptedSetError",
    "ExperimentConfig",
    "ExperimentReport",
    "Interval",
    "LEARNER_KINDS",
    "LearnerSpec",
    "NumericalError",
    "PredictionSet",
    "ReplicateRecord",
    "SCENARIOS",
    "ScenarioConfig",
    "SingularDesignError",
    "WeightVector",
    "aggregate_intersection",
    "aggregate_union",
    "aggregate_wta",
    "conformal_quantile",
    "cv_predictions",
    "emit_report",
    "empirical_risk",
    "fit_forest",
    "fit_knn",
    "fit_lasso",
    "fit_learner",
    "fit_locscale",
    "fit_ols",
    "full_conformal_interval",
    "generate",
    "nnls",
    "nonconformity_score",
    "run_csv",
    "run_simulation",
    "sl_point_prediction",
    "solve_simplex_weights",
    "split_conformal_interval",
    "to_csv",
    "true_interval",
    "weighted_majority_vote",
]
