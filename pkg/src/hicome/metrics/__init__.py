"""Saliency evaluation: MAE, F-measure, E-measure, S-measure and reports."""
from . import _backend
from .measures import (THRESHOLDS, EMeasure, FMeasure, e_measure, f_measure, mae,
                       s_measure, sweep_counts)
from .report import (METRIC_KEYS, MetricReport, MissingPredictionError, evaluate_dataset,
                     resize_map, score_image)

BACKEND = _backend.NAME

__all__ = [
    "BACKEND", "THRESHOLDS", "EMeasure", "FMeasure", "METRIC_KEYS", "MetricReport",
    "MissingPredictionError", "e_measure", "evaluate_dataset", "f_measure", "mae",
    "resize_map", "s_measure", "score_image", "sweep_counts",
]
