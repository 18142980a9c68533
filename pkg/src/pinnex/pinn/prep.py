"""Predictor standardisation and knot placement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature centre and scale, computed once on training data."""

    mean: np.ndarray
    sd: np.ndarray
    names: tuple[str, ...] = ()

    def apply(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} features, got {features.shape[-1]}")
        return (features - self.mean) / self.sd

    def invert(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized) * self.sd + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["sd"], dtype=np.float64),
                   tuple(d.get("names", ())))


def fit_standardization(features, names=None) -> StandardizationStats:
    """Column means and sample standard deviations (ddof=1) of a (n, p) array."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D (n, p) array")
    names = tuple(names) if names is not None else tuple(f"x_{j + 1}" for j in range(features.shape[1]))
    if features.shape[0] < 2:
        raise ValueError("need at least two rows to standardise")
    sd = features.std(axis=0, ddof=1)
    for j in range(features.shape[1]):
        if not np.isfinite(sd[j]) or sd[j] <= 0:
            raise ValueError(f"feature {names[j]!r} is constant and cannot be standardised")
    return StandardizationStats(features.mean(axis=0), sd, names)


def standardize(features, stats: StandardizationStats | None = None, names=None):
    """Return (standardised features, stats); stats are fitted if not given."""
    if stats is None:
        stats = fit_standardization(features, names)
    return stats.apply(features), stats


def place_knots(x, k: int) -> np.ndarray:
    """k knots at marginal quantiles of equally spaced probabilities.

    Tied knots are separated by a deterministic 1e-9 * range jitter so the
    sequence is strictly increasing.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if k < 1:
        raise ValueError("need at least one knot")
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("knots need a predictor with at least two distinct values")
    probs = np.linspace(0.0, 1.0, k) if k > 1 else np.array([0.5])
    knots = np.quantile(x, probs)
    step = 1e-9 * np.ptp(x)
    for j in range(1, k):
        if knots[j] <= knots[j - 1]:
            knots[j] = knots[j - 1] + step
    return knots
