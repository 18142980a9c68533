"""Stationary bootstrap over the time axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BootstrapPlan:
    replicates: int = 100
    mean_block: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.mean_block < 1:
            raise ValueError("mean block length must be at least 1")


def stationary_bootstrap_indices(T_len: int, mean_block: float, rng: np.random.Generator,
                                 return_blocks: bool = False):
    """One resampled sequence of 0-based time indices of length T_len.

    Blocks start uniformly on 0..T_len-1, have geometric lengths on {1, 2, ...}
    with mean ``mean_block``, wrap around the end of the series, and the
    concatenation is truncated to T_len.
    """
    if T_len < 1:
        raise ValueError("series length must be positive")
    out = []
    blocks = []
    filled = 0
    while filled < T_len:
        start = int(rng.integers(T_len))
        length = int(rng.geometric(1.0 / mean_block))
        blocks.append(length)
        out.append((start + np.arange(length)) % T_len)
        filled += length
    idx = np.concatenate(out)[:T_len]
    return (idx, blocks) if return_blocks else idx


def stationary_bootstrap(T_len: int, plan: BootstrapPlan) -> list[np.ndarray]:
    """``plan.replicates`` independent index sequences, reproducible from ``plan.seed``."""
    rng = np.random.default_rng(plan.seed)
    return [stationary_bootstrap_indices(T_len, plan.mean_block, rng) for _ in range(plan.replicates)]


def envelope(samples, probs=(0.025, 0.5, 0.975)) -> dict[float, np.ndarray]:
    """Pointwise empirical quantiles (median and envelope) across replicates on axis 0."""
    arr = np.asarray(samples, dtype=np.float64)
    return {float(p): np.quantile(arr, p, axis=0) for p in probs}
