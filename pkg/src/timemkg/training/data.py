"""Sliding windows, chronological splits, per-variable z-scoring, and CSV I/O."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DegenerateVariable, ParseError, ShapeMismatch, TooShort

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLITS = (0.7, 0.1, 0.2)
TIMESTAMP_HEADERS = {"date", "time", "timestamp", "datetime", "ds"}


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool mask of zero-variance columns

    @classmethod
    def fit(cls, x: np.ndarray, names: Sequence[str] | None = None) -> "NormStats":
        """Per-variable mean/std over every axis but the last."""
        flat = x.reshape(-1, x.shape[-1])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        constant = std == 0
        if constant.any():
            cols = [names[i] if names else str(i) for i in np.flatnonzero(constant)]
            warnings.warn(f"zero-variance variables normalized with std=1: {cols}", DegenerateVariable, stacklevel=2)
            std = np.where(constant, 1.0, std)
        return cls(mean, std, constant)

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["constant"], bool))


@dataclass
class Split:
    name: str
    start: int  # first row (inclusive) of the split in the source series
    stop: int
    history: np.ndarray  # (W, T, N), normalized
    target: np.ndarray  # (W, L, N) normalized forecasts, or (W,) integer labels

    def __len__(self):
        return self.history.shape[0]


@dataclass
class WindowedDataset:
    splits: dict[str, Split]
    norm_stats: NormStats
    names: list[str] = field(default_factory=list)
    task: str = "forecast"

    def __getitem__(self, name) -> Split:
        return self.splits[name]

    def __contains__(self, name):
        return name in self.splits and len(self.splits[name]) > 0

    @property
    def n_vars(self) -> int:
        return self.norm_stats.mean.shape[0]


def split_bounds(rows: int, fractions: Sequence[float]) -> list[tuple[int, int]]:
    """Chronological [start, stop) row ranges for the given fractions."""
    fractions = list(fractions)
    if not 1 <= len(fractions) <= 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be 1-3 nonnegative values summing to 1, got {fractions}")
    edges = np.rint(np.cumsum([0.0] + fractions) * rows).astype(int)
    edges[-1] = rows
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _windows(block: np.ndarray, history: int, horizon: int):
    count = block.shape[0] - history - horizon + 1
    if count <= 0:
        n = block.shape[1]
        return np.zeros((0, history, n)), np.zeros((0, horizon, n))
    idx = np.arange(count)[:, None]
    x = block[idx + np.arange(history)]
    y = block[idx + history + np.arange(horizon)]
    return x, y


def make_windows(series, history: int, horizon: int, splits: Sequence[float] = DEFAULT_SPLITS,
                 names: Sequence[str] | None = None) -> WindowedDataset:
    """Stride-1 (history, horizon) windows inside each chronological split.

    Normalization statistics come from the train rows only and are applied
    to every split. No window straddles two splits.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ShapeMismatch(f"series must be (rows, N), got {series.shape}")
    if history < 1 or horizon < 1:
        raise ConfigError("history and horizon must be >= 1")
    if series.shape[0] < history + horizon:
        raise TooShort(f"{series.shape[0]} rows cannot hold one window of {history}+{horizon}")
    bounds = split_bounds(series.shape[0], splits)
    train_start, train_stop = bounds[0]
    if train_stop - train_start < history + horizon:
        raise TooShort(f"train split has {train_stop - train_start} rows, need {history + horizon}")
    stats = NormStats.fit(series[train_start:train_stop], names)
    z = stats.normalize(series)
    out = {}
    for name, (a, b) in zip(SPLIT_NAMES, bounds):
        x, y = _windows(z[a:b], history, horizon)
        out[name] = Split(name, a, b, x, y)
    return WindowedDataset(out, stats, list(names or []), "forecast")


def make_classification_set(samples, labels, splits: Sequence[float] = DEFAULT_SPLITS,
                            names: Sequence[str] | None = None) -> WindowedDataset:
    """Split (M, T, N) labelled samples in order; normalize with train-sample statistics."""
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if samples.ndim != 3 or labels.shape != (samples.shape[0],):
        raise ShapeMismatch(f"samples {samples.shape} and labels {labels.shape} do not align")
    bounds = split_bounds(samples.shape[0], splits)
    a, b = bounds[0]
    if b <= a:
        raise TooShort("train split holds no samples")
    stats = NormStats.fit(samples[a:b], names)
    z = stats.normalize(samples)
    out = {name: Split(name, lo, hi, z[lo:hi], labels[lo:hi]) for name, (lo, hi) in zip(SPLIT_NAMES, bounds)}
    return WindowedDataset(out, stats, list(names or []), "classify")


# ----------------------------------------------------------------------------
# CSV


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_series_csv(path) -> tuple[list[str], list[str] | None, np.ndarray]:
    """Read a header-row CSV; a leading timestamp column is kept aside, not modelled.

    :return: (variable names, timestamps or None, values (rows, N))
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty CSV", 1)
    header, body = rows[0], [r for r in rows[1:] if r]
    has_ts = bool(header) and (header[0].strip().lower() in TIMESTAMP_HEADERS
                               or (body and not _is_number(body[0][0])))
    names = [h.strip() for h in (header[1:] if has_ts else header)]
    if not names or any(not n for n in names) or len(set(names)) != len(names):
        raise ParseError(f"{path}: header must hold unique nonempty variable names", 1)
    values = np.zeros((len(body), len(names)))
    stamps = [] if has_ts else None
    for i, row in enumerate(body):
        lineno = i + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        if has_ts:
            stamps.append(row[0])
            row = row[1:]
        try:
            values[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return names, stamps, values


def write_series_csv(path, names: Sequence[str], values, timestamps: Sequence[str] | None = None,
                     timestamp_header: str = "date"):
    values = np.asarray(values)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(([timestamp_header] if timestamps is not None else []) + list(names))
        for i, row in enumerate(values):
            cells = [repr(float(v)) for v in row]
            w.writerow(([timestamps[i]] if timestamps is not None else []) + cells)


def read_classification_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Long-format classification data: columns ``sample_id, label, <variables...>``.

    Rows of one sample are consecutive and every sample has the same length.
    :return: (variable names, samples (M, T, N), labels (M,))
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 3 or [h.strip() for h in rows[0][:2]] != ["sample_id", "label"]:
        raise ParseError(f"{path}: header must start with sample_id,label", 1)
    names = [h.strip() for h in rows[0][2:]]
    groups: dict[str, list] = {}
    labels: dict[str, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise ParseError(f"expected {len(rows[0])} fields, got {len(row)}", lineno)
        sid = row[0]
        try:
            label = int(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if labels.setdefault(sid, label) != label:
            raise ParseError(f"sample {sid!r} carries two labels", lineno)
        groups.setdefault(sid, []).append(vals)
    lengths = {len(v) for v in groups.values()}
    if len(lengths) > 1:
        raise ParseError(f"{path}: samples have unequal lengths {sorted(lengths)}")
    samples = np.array([groups[s] for s in groups], dtype=np.float64)
    return names, samples, np.array([labels[s] for s in groups], dtype=np.int64)


def write_classification_csv(path, names: Sequence[str], samples, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"] + list(names))
        for i, (sample, label) in enumerate(zip(samples, labels)):
            for row in sample:
                w.writerow([f"s{i}", int(label)] + [repr(float(v)) for v in row])
