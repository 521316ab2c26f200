"""
Forecast and classification metrics.

Forecast arrays are (L, N) for one window or (W, L, N) for many; each
(window, variable) column is one series. MASE scales each series by the
in-sample MAE of a seasonal-naive forecast with period ``m``. OWA compares
dataset-level SMAPE and MASE against those of the seasonal-naive forecast
that repeats the last ``m`` in-sample values.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import EmptySet, ShapeMismatch


@dataclass
class MetricsReport:
    mse: float | None = None
    mae: float | None = None
    smape: float | None = None
    mase: float | None = None
    owa: float | None = None
    accuracy: float | None = None
    per_horizon: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def smape_terms(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    num = np.abs(pred - truth)
    den = np.abs(pred) + np.abs(truth)
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def seasonal_naive(insample: np.ndarray, horizon: int, m: int = 1) -> np.ndarray:
    """Repeat the last ``m`` in-sample steps over ``horizon``: (.., T, N) -> (.., horizon, N)."""
    if insample.shape[-2] < m:
        raise ShapeMismatch(f"in-sample length {insample.shape[-2]} shorter than period {m}")
    idx = insample.shape[-2] - m + (np.arange(horizon) % m)
    return insample[..., idx, :]


def naive_scale(insample: np.ndarray, m: int = 1) -> np.ndarray:
    """In-sample MAE of the period-``m`` naive forecast, per series: (.., T, N) -> (.., N)."""
    if insample.shape[-2] <= m:
        raise ShapeMismatch(f"in-sample length {insample.shape[-2]} must exceed period {m}")
    return np.mean(np.abs(insample[..., m:, :] - insample[..., :-m, :]), axis=-2)


def _as_batch(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None]
    if a.ndim != 3:
        raise ShapeMismatch(f"expected (L, N) or (W, L, N), got {a.shape}")
    return a


def _mase(pred, truth, scale):
    if np.any(scale == 0):
        return None
    return float(np.mean(np.mean(np.abs(pred - truth), axis=-2) / scale))


def evaluate_forecast(pred, truth, insample=None, m: int = 1) -> MetricsReport:
    """
    MSE, MAE, SMAPE (percent, 0..200), MASE and OWA.

    :param pred: forecasts, (L, N) or (W, L, N)
    :param truth: same shape as ``pred``
    :param insample: history each forecast was made from, (T, N) or (W, T, N); MASE/OWA need it
    :param m: seasonal period of the naive reference
    Metrics whose denominator vanishes are reported as ``None``.
    """
    pred, truth = _as_batch(pred), _as_batch(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    err = pred - truth
    report = MetricsReport(
        mse=float(np.mean(err ** 2)),
        mae=float(np.mean(np.abs(err))),
        smape=float(200.0 * np.mean(smape_terms(pred, truth))),
        per_horizon={
            "mse": np.mean(err ** 2, axis=(0, 2)).tolist(),
            "mae": np.mean(np.abs(err), axis=(0, 2)).tolist(),
        },
    )
    if insample is None:
        return report
    insample = _as_batch(insample)
    if insample.shape[0] != pred.shape[0] or insample.shape[2] != pred.shape[2]:
        raise ShapeMismatch(f"insample {insample.shape} does not match forecasts {pred.shape}")
    scale = naive_scale(insample, m)
    report.mase = _mase(pred, truth, scale)
    naive = seasonal_naive(insample, pred.shape[1], m)
    naive_smape = 200.0 * np.mean(smape_terms(naive, truth))
    naive_mase = _mase(naive, truth, scale)
    if report.mase is not None and naive_mase and naive_smape > 0:
        report.owa = 0.5 * (report.smape / naive_smape + report.mase / naive_mase)
    return report


def evaluate_classification(logits, labels) -> MetricsReport:
    """Accuracy of argmax(logits); ties go to the lowest class index."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptySet("no samples to evaluate")
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    return MetricsReport(accuracy=float(np.mean(np.argmax(logits, axis=1) == labels)))
