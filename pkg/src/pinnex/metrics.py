"""Scores for fitted extreme-value models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .evt import BGevConfig, QuantileParams, bgev_neglogcdf

PIT_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# threshold-weighted CRPS


def twcrps_thresholds(n: int = 24, low: float = 30.0, high: float = 1e5) -> np.ndarray:
    """Thresholds on the square-root scale, geometric in the original scale from low to high."""
    return np.sqrt(np.geomspace(low, high, n))


def _wtilde(x):
    return 1.0 - (1.0 + (np.asarray(x, dtype=np.float64) + 1.0) ** 2 / 1000.0) ** -0.25


def tw_weight(x, v_max: float):
    """w(x) = w~(x) / w~(v_max) with w~(x) = 1 - (1 + (x + 1)^2 / 1000)^(-1/4)."""
    return _wtilde(x) / _wtilde(v_max)


def twcrps(y, cdf_at_thresholds, thresholds=None, observed=None) -> float:
    """Sum over cells and thresholds of w(v_i) [1{y <= v_i} - p(v_i)]^2.

    ``cdf_at_thresholds`` has shape y.shape + (n_thresholds,).
    """
    thresholds = twcrps_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(cdf_at_thresholds, dtype=np.float64)
    if p.shape != y.shape + thresholds.shape:
        raise ValueError(f"forecast cdf shape {p.shape} does not match {y.shape + thresholds.shape}")
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
    yo, po = y[obs], p[obs]
    if np.any(np.diff(po, axis=-1) < -1e-12):
        raise ValueError("forecast cdf is not monotone across thresholds")
    w = tw_weight(thresholds, thresholds[-1])
    ind = (yo[:, None] <= thresholds).astype(np.float64)
    return float(np.sum(w * (ind - po) ** 2))


# ---------------------------------------------------------------------------
# Q-Q based scores


def pit_exponential(cdf_values) -> np.ndarray:
    """-log(1 - F(y)), with F clamped below 1 - 1e-12."""
    f = np.minimum(np.asarray(cdf_values, dtype=np.float64), 1.0 - PIT_CLAMP)
    return -np.log1p(-f)


def smad_grid(p1: float, m: int) -> np.ndarray:
    """p_j = p1 + (j - 1)(1 - p1)/m for j = 1..m."""
    return p1 + np.arange(m) * (1.0 - p1) / m


def empirical_quantile(x, p) -> np.ndarray:
    """Inverse of the empirical cdf: the ceil(n p)-th order statistic."""
    xs = np.sort(np.asarray(x, dtype=np.float64))
    n = xs.size
    idx = np.ceil(n * np.asarray(p) - 1e-9).astype(np.int64)
    return xs[np.clip(idx, 1, n) - 1]


def qq_table(e, p1: float = 0.95, m: int | None = None) -> dict[str, np.ndarray]:
    """Q-Q coordinates above level p1 in standard exponential margins."""
    e = np.asarray(e, dtype=np.float64).ravel()
    e = e[np.isfinite(e)]
    if m is None:
        m = int(math.floor((1.0 - p1) * e.size + 1e-9))
    if m < 2:
        raise ValueError(f"sMAD needs m >= 2 grid points, got {m}")
    p = smad_grid(p1, m)
    return {"p": p, "empirical": empirical_quantile(e, p), "theoretical": -np.log1p(-p)}


def smad(e, p1: float = 0.95, m: int | None = None) -> float:
    """Mean absolute deviation of upper-tail exponential Q-Q points from the diagonal.

    ``m`` defaults to the number of observations expected above p1.
    """
    qq = qq_table(e, p1, m)
    return float(np.mean(np.abs(qq["empirical"] - qq["theoretical"])))


# ---------------------------------------------------------------------------
# tail log-survival score and centred MISE


def stls_grid(p_minus: float = 0.99, p_max: float = 0.9999, n: int = 200) -> np.ndarray:
    if not 0 <= p_minus < p_max < 1:
        raise ValueError("need 0 <= p_minus < p_max < 1")
    return np.linspace(p_minus, p_max, n)


def stls_from_log_survival(log_survival, p_grid, p_minus: float | None = None) -> float:
    """Tail log-survival score from log(1 - F_hat(F_true^-1(p))) on a p grid.

    ``log_survival`` has shape (n_cases, len(p_grid)).  The trapezoid
    integral over the grid is rescaled to the full tail width 1 - p_minus,
    so a constant log-survival error delta scores exactly delta^2 (1 - p_minus).
    """
    p = np.asarray(p_grid, dtype=np.float64)
    ls = np.atleast_2d(np.asarray(log_survival, dtype=np.float64))
    if ls.shape[-1] != p.size:
        raise ValueError("log-survival values must be tabulated on the p grid")
    if not np.all(np.isfinite(ls)):
        raise ValueError("fitted cdf reaches 1 on the evaluation grid; log-survival is singular")
    p_minus = p[0] if p_minus is None else p_minus
    err = (ls - np.log1p(-p)) ** 2
    integral = np.trapezoid(err, p, axis=-1) * (1.0 - p_minus) / (p[-1] - p[0])
    return float(np.mean(integral))


def stls(fitted_cdf_at_true_quantiles, p_grid, p_minus: float | None = None) -> float:
    """As :func:`stls_from_log_survival` with F_hat(F_true^-1(p)) supplied directly."""
    f = np.asarray(fitted_cdf_at_true_quantiles, dtype=np.float64)
    if np.any(f >= 1.0):
        raise ValueError("fitted cdf reaches 1 on the evaluation grid; log-survival is singular")
    return stls_from_log_survival(np.log1p(-f), p_grid, p_minus)


def equal_probability_grid(n: int = 5000, dist=stats.norm) -> np.ndarray:
    """n quantiles at probabilities (i - 1/2)/n of a predictor's marginal law."""
    return dist.ppf((np.arange(n) + 0.5) / n)


def mise_centered(m_true, m_hat, x, x0: float = 0.0) -> float:
    """Mean over estimates of the integral of the squared centred difference.

    ``m_true`` is a callable, ``m_hat`` a callable or a list of callables
    (replicates); both are centred at ``x0`` before comparing.
    """
    x = np.asarray(x, dtype=np.float64)
    estimates = m_hat if isinstance(m_hat, (list, tuple)) else [m_hat]
    truth = np.asarray(m_true(x)) - np.asarray(m_true(np.array([x0])))[0]
    vals = []
    for f in estimates:
        est = np.asarray(f(x)) - np.asarray(f(np.array([x0])))[0]
        vals.append(np.trapezoid((truth - est) ** 2, x))
    return float(np.mean(vals))


def aic(nll: float, k: int) -> float:
    return 2.0 * k + 2.0 * float(nll)


# ---------------------------------------------------------------------------
# predictive distributions of the point-process model


def pp_predictive_cdf(v, q, s, xi: float, n_y: int = 1, p0=None, cfg: BGevConfig = BGevConfig(),
                      alpha: float = 0.5, beta: float = 0.5) -> np.ndarray:
    """Per-observation cdf G_b(v)^(1/n_y), mixed with a point mass at 0 when p0 is given.

    ``v`` broadcasts elementwise against q and s.
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    neglog = bgev_neglogcdf(v, QuantileParams(q, s, float(xi), alpha, beta), cfg)
    f = np.exp(-neglog / n_y)
    if p0 is not None:
        f = (1.0 - np.asarray(p0)) + np.asarray(p0) * f
    return f


def pp_cdf_table(thresholds, q, s, xi: float, n_y: int = 1, p0=None,
                 cfg: BGevConfig = BGevConfig()) -> np.ndarray:
    """Predictive cdf at every threshold; shape q.shape + (n_thresholds,)."""
    q = np.asarray(q, dtype=np.float64)[..., None]
    s = np.asarray(s, dtype=np.float64)[..., None]
    p0 = None if p0 is None else np.asarray(p0)[..., None]
    return pp_predictive_cdf(np.asarray(thresholds, dtype=np.float64), q, s, xi, n_y, p0, cfg)


def pp_log_survival(v, q, s, xi: float, n_y: int = 1, cfg: BGevConfig = BGevConfig()) -> np.ndarray:
    """log(1 - G_b(v)^(1/n_y)), accurate in the far tail."""
    neglog = bgev_neglogcdf(v, QuantileParams(np.asarray(q, dtype=np.float64),
                                              np.asarray(s, dtype=np.float64), float(xi)), cfg)
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-neglog / n_y))


@dataclass
class ScorePanel:
    training_loss: float
    validation_loss: float | None = None
    aic: float | None = None
    smad_in: float | None = None
    smad_out: float | None = None
    twcrps: float | None = None
    stls: float | None = None
    n_params: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)
