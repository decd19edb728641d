"""Experiment runner and retrieval metrics."""

from activeindex.evalharness.experiment import (
    ExperimentConfig,
    FeatureCache,
    StageError,
    run_experiment,
    with_config,
)
from activeindex.evalharness.metrics import (
    PrPoint,
    best_pairs,
    decomposition_check,
    decomposition_relative,
    ivf_failure_rate,
    micro_ap,
    micro_ap_from_pairs,
    recall_at_1,
    recall_bound,
    recall_bound_check,
)
from activeindex.evalharness.report import EvalReport, QualitySummary, TransformRow, recall_bound_report

__all__ = [
    "EvalReport",
    "ExperimentConfig",
    "FeatureCache",
    "PrPoint",
    "QualitySummary",
    "StageError",
    "TransformRow",
    "best_pairs",
    "decomposition_check",
    "decomposition_relative",
    "ivf_failure_rate",
    "micro_ap",
    "micro_ap_from_pairs",
    "recall_at_1",
    "recall_bound",
    "recall_bound_check",
    "recall_bound_report",
    "run_experiment",
    "with_config",
]
