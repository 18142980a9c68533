"""Cross-validation folds from a simulated space-time Gaussian field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_MILES = 3958.8


@dataclass(frozen=True)
class FoldPlan:
    """Fold label per cell (1..K), 0 where the response is unobserved."""

    K: int
    labels: np.ndarray
    spatial_range: float = 100.0
    temporal_range: float = 5.0
    block: int = 9

    def fold_mask(self, k: int) -> np.ndarray:
        return self.labels == k

    def train_mask(self, k: int) -> np.ndarray:
        return (self.labels > 0) & (self.labels != k)


def great_circle_miles(lat, lon) -> np.ndarray:
    """Pairwise haversine distances (miles) between points given in degrees."""
    lat = np.radians(np.asarray(lat, dtype=np.float64))
    lon = np.radians(np.asarray(lon, dtype=np.float64))
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def separable_correlation(dist_miles, dt, spatial_range: float = 100.0, temporal_range: float = 5.0):
    return np.exp(-np.asarray(dist_miles) / spatial_range) * np.exp(-np.abs(np.asarray(dt)) / temporal_range)


def _chol(c: np.ndarray) -> np.ndarray:
    jitter = 1e-8
    return np.linalg.cholesky(c + jitter * np.eye(c.shape[0]))


def make_cv_folds(lat, lon, times, observed, K: int = 5, seed: int = 0, block: int = 9,
                  spatial_range: float = 100.0, temporal_range: float = 5.0) -> FoldPlan:
    """Assign observed cells to K folds via a simulated Gaussian field.

    ``lat``/``lon`` give the S spatial sites in degrees, ``times`` the T time
    steps and ``observed`` a (T, S) mask.  For each block of ``block``
    consecutive time steps a zero-mean, unit-variance field with correlation
    exp(-dist/spatial_range) * exp(-|dt|/temporal_range) is simulated; a cell
    goes to fold k when its value lies between the (k-1)/K and k/K empirical
    quantiles of the block's observed cells (ranks, so fold sizes differ by
    at most one).
    """
    if K < 2:
        raise ValueError("need at least two folds")
    times = np.asarray(times, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    T, S = observed.shape
    if times.shape != (T,) or np.shape(lat) != (S,) or np.shape(lon) != (S,):
        raise ValueError("coordinates and times must match the (T, S) observed mask")
    rng = np.random.default_rng(seed)
    Ls = _chol(separable_correlation(great_circle_miles(lat, lon), 0.0, spatial_range, temporal_range))
    labels = np.zeros((T, S), dtype=np.int64)
    for start in range(0, T, block):
        sl = slice(start, min(start + block, T))
        tb = times[sl]
        Lt = _chol(separable_correlation(0.0, tb[:, None] - tb[None, :], spatial_range, temporal_range))
        # Kronecker structure: vec(Lt E Ls^T) has covariance Ct (x) Cs
        field = Lt @ rng.standard_normal((tb.size, S)) @ Ls.T
        obs = observed[sl]
        values = field[obs]
        n = values.size
        if n == 0:
            continue
        ranks = np.empty(n, dtype=np.int64)
        ranks[np.argsort(values, kind="stable")] = np.arange(n)
        block_labels = np.zeros(obs.shape, dtype=np.int64)
        block_labels[obs] = ranks * K // n + 1
        labels[sl] = block_labels
    return FoldPlan(K, labels, spatial_range, temporal_range, block)
