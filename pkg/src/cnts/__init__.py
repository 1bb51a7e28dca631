"""Cooperative reconstructor/detector training for univariate time-series anomaly detection."""

__version__ = "0.1.0"

from .data import TimeSeries, default_benchmark, load_series_csv, make_windows, synth_series
from .evaluation import EvalReport, auc, best_f1_threshold, evaluate
from .models import DetectorModel, ReconstructorModel, detect, load_checkpoint, reconstruct, save_checkpoint
from .training import (
    TrainConfig,
    benchmark_config,
    train_baseline_detector,
    train_baseline_reconstructor,
    train_cnts,
)

__all__ = [
    "TimeSeries", "default_benchmark", "load_series_csv", "make_windows", "synth_series",
    "EvalReport", "auc", "best_f1_threshold", "evaluate",
    "DetectorModel", "ReconstructorModel", "detect", "load_checkpoint", "reconstruct", "save_checkpoint",
    "TrainConfig", "benchmark_config", "train_baseline_detector", "train_baseline_reconstructor", "train_cnts",
]
