"""Per-point predictive distributions shared by every UQ backend.

A :class:`PredictionSet` is columnar: one entry per test point in each array.
Sampling backends (ensemble, BNN) fill ``samples`` and derive mean/std from
them; the DGP fills mean/std directly and leaves ``samples`` as ``None``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError

PREDICTION_HEADER = [
    "point_id", "y_true_kw_m2", "y_pred_mean_kw_m2", "y_pred_std_kw_m2",
    "rstd_pct", "lo_2sigma", "hi_2sigma",
]

# Recorded in every report so the convention is auditable.
STD_CONVENTION = "population (divisor n)"
RSTD_CONVENTION = "100*std/|mean|"


@dataclass(frozen=True)
class PredictionSet:
    mean: np.ndarray
    std: np.ndarray
    samples: Optional[np.ndarray] = None  # (n_points, n_samples)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise ShapeError(f"mean/std shapes differ: {mean.shape} vs {std.shape}")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float)
            if s.ndim != 2 or s.shape[0] != mean.shape[0]:
                raise ShapeError(f"samples must be (n_points, n_samples), got {s.shape}")
            object.__setattr__(self, "samples", s)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_samples(cls, samples) -> "PredictionSet":
        s = np.asarray(samples, dtype=float)
        return cls(s.mean(axis=1), s.std(axis=1), s)

    def __len__(self):
        return len(self.mean)

    def __getitem__(self, idx) -> "PredictionSet":
        idx = np.atleast_1d(np.arange(len(self))[idx])
        samples = None if self.samples is None else self.samples[idx]
        return PredictionSet(self.mean[idx], self.std[idx], samples)

    @property
    def rstd(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return 100.0 * self.std / np.abs(self.mean)

    @property
    def lo_2sigma(self) -> np.ndarray:
        return self.mean - 2.0 * self.std

    @property
    def hi_2sigma(self) -> np.ndarray:
        return self.mean + 2.0 * self.std

    def shifted(self, offset) -> "PredictionSet":
        """Add a per-point constant to every sample; std is unchanged."""
        offset = np.asarray(offset, dtype=float)
        if self.samples is not None:
            return PredictionSet.from_samples(self.samples + offset[:, None])
        return PredictionSet(self.mean + offset, self.std.copy())

    def to_csv(self, path, y_true, point_ids=None):
        y_true = np.asarray(y_true, dtype=float)
        ids = np.arange(len(self)) if point_ids is None else np.asarray(point_ids)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PREDICTION_HEADER)
            for row in zip(ids, y_true, self.mean, self.std, self.rstd, self.lo_2sigma, self.hi_2sigma):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def read_predictions_csv(path):
    """Return ``(point_ids, y_true, PredictionSet)`` from a prediction CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != PREDICTION_HEADER:
            raise ShapeError(f"unexpected prediction header {header}")
        rows = [r for r in reader if r]
    ids = np.array([int(r[0]) for r in rows], dtype=int)
    vals = np.array([[float(v) for v in r[1:4]] for r in rows]).reshape(-1, 3)
    return ids, vals[:, 0], PredictionSet(vals[:, 1], vals[:, 2])
