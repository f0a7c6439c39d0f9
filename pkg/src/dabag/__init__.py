"""Domain adaptive bagging: test-guided resampling, voting ensembles, and
distance-to-measure anomaly screening."""

from ._kernels import numba_enabled, use_numba
from .anomaly import (
    AnomalyCalibration,
    AnomalyConfig,
    calibrate,
    dtm_hat,
    dtm_scores,
    filter_anomalies,
    test_statistic,
)
from .classifiers import (
    ClassifierSpec,
    GaussianMixtureOracle,
    bayes_classify,
    bayes_risk,
    fit,
    knn_schedule,
    predict,
)
from .core import (
    ConfigError,
    DataError,
    Dataset,
    InternalError,
    Metric,
    RngStream,
    UsageError,
    class_proportions,
    distance,
)
from .ensemble import (
    DaBaggingConfig,
    EnsembleModel,
    fit_ensemble,
    predict_ensemble,
    variance_vs_b,
    vote_fraction,
)
from .evaluate import (
    ExperimentResult,
    MethodSpec,
    accuracy,
    excess_risk_check,
    run_experiment,
    test_error,
    type_i_and_power,
)
from .neighbors import ClassWeights, NeighborSet, class_weights, k_nearest
from .resampler import (
    ResampleConfig,
    ResampleTrace,
    inn_resample,
    inn_step,
    resample_batch,
)
from .simgen import (
    GroundTruth,
    ScenarioSpec,
    gen_setting1,
    gen_setting2,
    gen_toy3,
    generate,
    haar_rotation,
    spec_from_q1,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyCalibration",
    "AnomalyConfig",
    "ClassWeights",
    "ClassifierSpec",
    "ConfigError",
    "DaBaggingConfig",
    "DataError",
    "Dataset",
    "EnsembleModel",
    "ExperimentResult",
    "GaussianMixtureOracle",
    "GroundTruth",
    "InternalError",
    "MethodSpec",
    "Metric",
    "NeighborSet",
    "ResampleConfig",
    "ResampleTrace",
    "RngStream",
    "ScenarioSpec",
    "UsageError",
    "accuracy",
    "bayes_classify",
    "bayes_risk",
    "calibrate",
    "class_proportions",
    "class_weights",
    "distance",
    "dtm_hat",
    "dtm_scores",
    "excess_risk_check",
    "filter_anomalies",
    "fit",
    "fit_ensemble",
    "gen_setting1",
    "gen_setting2",
    "gen_toy3",
    "generate",
    "haar_rotation",
    "inn_resample",
    "inn_step",
    "k_nearest",
    "knn_schedule",
    "numba_enabled",
    "predict",
    "predict_ensemble",
    "resample_batch",
    "run_experiment",
    "spec_from_q1",
    "test_error",
    "test_statistic",
    "type_i_and_power",
    "use_numba",
    "variance_vs_b",
    "vote_fraction",
]
