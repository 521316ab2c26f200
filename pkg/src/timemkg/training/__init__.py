from .data import (
    DEFAULT_SPLITS,
    NormStats,
    Split,
    WindowedDataset,
    make_classification_set,
    make_windows,
    read_classification_csv,
    read_series_csv,
    split_bounds,
    write_classification_csv,
    write_series_csv,
)
from .loop import TrainConfig, TrainResult, evaluate, predict, split_loss, train
from .metrics import MetricsReport, evaluate_classification, evaluate_forecast, naive_scale, seasonal_naive
from .optim import Adam, OptimizerState
from .synthetic import (
    SyntheticData,
    SyntheticEdge,
    SyntheticSpec,
    SyntheticVariable,
    default_spec,
    gen_synthetic,
    gen_synthetic_classification,
    truth_graph,
)

__all__ = [
    "DEFAULT_SPLITS", "Adam", "MetricsReport", "NormStats", "OptimizerState", "Split", "SyntheticData",
    "SyntheticEdge", "SyntheticSpec", "SyntheticVariable", "TrainConfig", "TrainResult", "WindowedDataset",
    "default_spec", "evaluate", "evaluate_classification", "evaluate_forecast", "gen_synthetic",
    "gen_synthetic_classification", "make_classification_set", "make_windows", "naive_scale", "predict",
    "read_classification_csv", "read_series_csv", "seasonal_naive", "split_bounds", "split_loss", "train",
    "truth_graph", "write_classification_csv", "write_series_csv",
]
