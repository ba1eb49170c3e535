"""Baseline torque estimators sharing the predictor interface.

Every estimator exposes ``method_tag`` and ``predict_series(dataset)``
returning ``(tau_hat (n, 6), available (n,))``, so the wrench estimator and
the benchmark treat them and the LSTM models interchangeably.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .datagen import ConfigError, Dataset


class TorquePredictor(Protocol):
    method_tag: str

    def predict_series(self, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]: ...


class FitError(ValueError):
    pass


class MeasurementOnly:
    """Predicts zero torque, so the whole measured torque is treated as external."""

    method_tag = "measure_only"

    def predict(self, sample=None) -> np.ndarray:
        return np.zeros(6)

    def predict_series(self, dataset: Dataset):
        n = len(dataset)
        return np.zeros((n, 6)), np.ones(n, dtype=bool)


def measurement_only(sample=None) -> np.ndarray:
    return np.zeros(6)


@dataclass
class BiasModel:
    bias: np.ndarray
    n_samples_used: int
    velocity_eps: float
    method_tag: str = "bias"

    def __post_init__(self):
        if self.n_samples_used < 1:
            raise ValueError("bias model needs at least one sample")
        if not self.velocity_eps > 0:
            raise ValueError("velocity_eps must be > 0")

    def predict(self, sample=None) -> np.ndarray:
        return self.bias.copy()

    def predict_series(self, dataset: Dataset):
        n = len(dataset)
        return np.tile(self.bias, (n, 1)), np.ones(n, dtype=bool)


def fit_bias(dataset: Dataset, velocity_eps: float = 1e-3) -> BiasModel:
    """Average measured torque over the (near) zero-velocity samples of ``dataset``.

    Pass the training subset; ``Dataset.subset("train")`` gives it.
    """
    if not velocity_eps > 0:
        raise ValueError("velocity_eps must be > 0")
    still = np.max(np.abs(dataset.qd), axis=1) < velocity_eps
    n = int(still.sum())
    if n == 0:
        raise FitError(
            f"no training samples with max |qd| < {velocity_eps:g}; "
            "increase velocity_eps or add dwell segments to the trajectory"
        )
    return BiasModel(dataset.tau_measured[still].mean(axis=0), n, float(velocity_eps))


def _ordered_mean(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Mean of ``values[idx]`` accumulated in ascending row order."""
    return values[np.sort(idx)].mean(axis=0)


def squared_distances(keys: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = keys - query
    return np.einsum("ij,ij->i", diff, diff)


@dataclass
class LookupIndex:
    """Exact k-nearest-neighbour table over z-scored (q, qd) vectors.

    Neighbours are ranked by (squared Euclidean distance, stored row index),
    so ties go to the earlier row. The estimate is the unweighted mean of the
    neighbours' stored torques.
    """

    keys: np.ndarray
    values: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    k: int = 4
    warnings: list[str] = field(default_factory=list)
    method_tag: str = "vector_search"

    def __post_init__(self):
        n = len(self.keys)
        if len(self.values) != n:
            raise ValueError("keys and values must have the same number of rows")
        if not 1 <= self.k <= n:
            raise ConfigError(f"k must satisfy 1 <= k <= N; got k={self.k}, N={n}")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature stds must be > 0")

    @property
    def size(self) -> int:
        return len(self.keys)

    def normalize(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.feature_means) / self.feature_stds

    def neighbors(self, query_features) -> np.ndarray:
        """Row indices of the k nearest keys, nearest first."""
        d = squared_distances(self.keys, self.normalize(query_features))
        k = self.k
        if k < len(d):
            # every row tied with the k-th distance must stay a candidate
            kth = np.partition(d, k - 1)[k - 1]
            cand = np.flatnonzero(d <= kth)
        else:
            cand = np.arange(len(d))
        order = np.lexsort((cand, d[cand]))
        return cand[order[:k]]

    def lookup(self, query_features) -> np.ndarray:
        return _ordered_mean(self.values, self.neighbors(query_features))

    def predict_series(self, dataset: Dataset):
        feats = dataset.features
        out = np.empty((len(dataset), 6))
        for i, f in enumerate(feats):
            out[i] = self.lookup(f)
        return out, np.ones(len(dataset), dtype=bool)


def build_index(dataset: Dataset, k: int = 4) -> LookupIndex:
    """Index the given (training) samples: keys are z-scored (q, qd), values the measured torques."""
    feats = dataset.features
    n = len(feats)
    if not 1 <= k <= n:
        raise ConfigError(f"vector search needs 1 <= k <= N; got k={k}, N={n}")
    means = feats.mean(axis=0)
    stds = feats.std(axis=0)
    notes = []
    flat = ~(stds > 0)
    if flat.any():
        cols = np.flatnonzero(flat).tolist()
        msg = f"features {cols} have zero spread; their std is clamped to 1"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        stds = np.where(flat, 1.0, stds)
    keys = (feats - means) / stds
    return LookupIndex(keys, dataset.tau_measured.copy(), means, stds, k, notes)


def lookup(index: LookupIndex, sample) -> np.ndarray:
    """Estimate for one sample (anything with ``state.q``/``state.qd``) or a raw 12-vector."""
    if hasattr(sample, "state"):
        feats = np.concatenate([sample.state.q, sample.state.qd])
    else:
        feats = np.asarray(sample, dtype=float)
    return index.lookup(feats)
