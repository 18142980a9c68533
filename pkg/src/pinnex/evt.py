"""Extreme-value distributions and the blended-GEV point-process likelihood.

The GEV is handled in two parametrisations: classical (mu, sigma, xi) and
the quantile form (q_alpha, s_beta, xi) in which q_alpha is the alpha
quantile and s_beta = q_{1-beta/2} - q_{beta/2}.  For xi > 0 the quantile
form gives the convenient identity

    1 + xi (z - mu) / sigma = l_alpha + D (z - q_alpha) / s_beta,

with l_x = (-log x)^(-xi) and D = l_{1-beta/2} - l_{beta/2}, which every
blended-GEV routine below is written in terms of.

The private ``_bgev_*`` helpers accept either numpy arrays or
:class:`~pinnex.autodiff.Tensor` objects so the same code evaluates the
likelihood and records it for differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value_of

LOG_DENSITY_FLOOR = -1e10
# shapes smaller than this are evaluated with the Gumbel (xi = 0) formulas
XI_ZERO = 1e-12


class DomainError(ValueError):
    """A value lies outside the support of the distribution."""


def _loglog(x: float) -> float:
    return math.log(-math.log(x))


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("GEV scale must be positive")


@dataclass(frozen=True)
class QuantileParams:
    q_alpha: float
    s_beta: float
    xi: float
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if np.any(np.asarray(self.s_beta) <= 0):
            raise ValueError("spread s_beta must be positive")
        if not (0.0 < self.alpha < 1.0 and 0.0 < self.beta < 1.0):
            raise ValueError("alpha and beta must lie in (0, 1)")


@dataclass(frozen=True)
class BGevConfig:
    """Blending hyperparameters of the bGEV distribution."""

    p_b1: float = 0.05
    p_b2: float = 0.2
    c1: float = 5.0
    c2: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.p_b1 < self.p_b2 < 1.0):
            raise ValueError(f"need 0 < p_b1 < p_b2 < 1, got {self.p_b1}, {self.p_b2}")
        if self.c1 <= 3.0 or self.c2 <= 3.0:
            raise ValueError("beta shapes c1, c2 must exceed 3 for a continuous log-density")


@dataclass(frozen=True)
class GpdParams:
    sigma_u: float
    xi: float

    def __post_init__(self):
        if np.any(np.asarray(self.sigma_u) <= 0):
            raise ValueError("GPD scale must be positive")


@dataclass
class PpContext:
    """Point-process setup: blocks per year and the exceedance threshold grid."""

    n_y: int = 1
    u: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.n_y < 1:
            raise ValueError("n_y must be at least 1")


# ---------------------------------------------------------------------------
# GEV / Gumbel


def gev_cdf(z, p: GevParams):
    z = np.asarray(z, dtype=np.float64)
    y = (z - p.mu) / p.sigma
    xi = np.asarray(p.xi, dtype=np.float64)
    gumbel = np.abs(xi) < XI_ZERO
    if np.all(gumbel):
        return np.exp(-np.exp(-y))
    xs = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        t = 1.0 + xs * y
        out = np.exp(-np.exp(-np.log1p(xs * y) / xs))
    # {.}_+ clamp: below the lower endpoint (xi > 0) the cdf is 0, above the
    # upper endpoint (xi < 0) it is 1
    out = np.where(t > 0, out, np.where(xs > 0, 0.0, 1.0))
    return np.where(gumbel, np.exp(-np.exp(-y)), out)


def gev_logpdf(z, p: GevParams):
    z = np.asarray(z, dtype=np.float64)
    y = (z - p.mu) / p.sigma
    if abs(p.xi) < XI_ZERO:
        return -np.log(p.sigma) - y - np.exp(-y)
    t = 1.0 + p.xi * y
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.log1p(p.xi * y)
        out = -np.log(p.sigma) - (1.0 / p.xi + 1.0) * logt - np.exp(-logt / p.xi)
    return np.where(t > 0, out, -np.inf)


def gev_quantile(prob, par: GevParams):
    prob = np.asarray(prob, dtype=np.float64)
    if np.any((prob <= 0) | (prob >= 1)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    ll = np.log(-np.log(prob))
    if abs(par.xi) < XI_ZERO:
        return par.mu - par.sigma * ll
    return par.mu + par.sigma * np.expm1(-par.xi * ll) / par.xi


def gev_lower_endpoint(par: GevParams):
    if par.xi <= 0:
        return -np.inf
    return par.mu - par.sigma / par.xi


def reparam_to_classic(q: QuantileParams) -> GevParams:
    """Map (q_alpha, s_beta, xi) to (mu, sigma, xi)."""
    if np.any(np.asarray(q.s_beta) <= 0):
        raise ValueError("spread s_beta must be positive")
    a, b = q.alpha, q.beta
    if q.xi < 0:
        raise ValueError("quantile parametrisation is implemented for xi >= 0")
    if q.xi < XI_ZERO:
        denom = _loglog(b / 2) - _loglog(1 - b / 2)
        return GevParams(q.q_alpha + q.s_beta * _loglog(a) / denom, q.s_beta / denom, q.xi)
    # l_x - 1 = expm1(-xi log(-log x)), kept accurate for small xi
    l1 = lambda x: math.expm1(-q.xi * _loglog(x))  # noqa: E731
    denom = l1(1 - b / 2) - l1(b / 2)
    mu = q.q_alpha - q.s_beta * l1(a) / denom
    sigma = q.xi * q.s_beta / denom
    return GevParams(mu, sigma, q.xi)


def classic_to_reparam(p: GevParams, alpha: float = 0.5, beta: float = 0.5) -> QuantileParams:
    qa = gev_quantile(alpha, p)
    sb = gev_quantile(1 - beta / 2, p) - gev_quantile(beta / 2, p)
    return QuantileParams(float(qa), float(sb), p.xi, alpha, beta)


# ---------------------------------------------------------------------------
# blended GEV


class _Consts:
    """xi-dependent constants of the quantile parametrisation (tensor-aware)."""

    def __init__(self, xi, cfg: BGevConfig, alpha: float, beta: float):
        self.xi = xi
        self.la = ad.exp(ad.mul(xi, -_loglog(alpha)))
        self.D = ad.sub(ad.exp(ad.mul(xi, -_loglog(1 - beta / 2))),
                        ad.exp(ad.mul(xi, -_loglog(beta / 2))))
        self.l1 = ad.exp(ad.mul(xi, -_loglog(cfg.p_b1)))
        self.l2 = ad.exp(ad.mul(xi, -_loglog(cfg.p_b2)))
        self.gumbel_ll1 = _loglog(cfg.p_b1)
        self.dL = _loglog(cfg.p_b1) - _loglog(cfg.p_b2)
        self.cfg = cfg
        # plain floats for region selection
        self.v = {k: float(value_of(getattr(self, k))) for k in ("la", "D", "l1", "l2")}


def _check_xi(xi):
    xv = float(value_of(xi))
    if not (xv > 0):
        raise ValueError(f"the blended GEV needs xi > 0, got {xv}")


def _take(x, idx):
    return ad.take(x, idx) if isinstance(x, ad.Tensor) else np.asarray(x)[idx]


def _bgev_bounds_values(q, s, k: _Consts):
    qv, sv = value_of(q), value_of(s)
    b1 = qv + sv * (k.v["l1"] - k.v["la"]) / k.v["D"]
    b2 = qv + sv * (k.v["l2"] - k.v["la"]) / k.v["D"]
    return b1, b2


def _region_terms(z, q, s, k: _Consts, region: str, want: str):
    """-log G_b(z) or log(g_b(z)/G_b(z)) on cells of a single region."""
    xi = k.xi
    if region == "frechet":
        t = ad.add(k.la, ad.div(ad.mul(k.D, ad.sub(z, q)), s))
        logt = ad.log(t)
        if want == "neglog":
            return ad.exp(ad.div(ad.neg(logt), xi))
        return ad.sub(ad.sub(ad.sub(ad.log(k.D), ad.log(xi)), ad.log(s)),
                      ad.mul(ad.add(ad.reciprocal(xi), 1.0), logt))
    b1 = ad.add(q, ad.div(ad.mul(s, ad.sub(k.l1, k.la)), k.D))
    width = ad.div(ad.mul(s, ad.sub(k.l2, k.l1)), k.D)
    sig = ad.div(width, k.dL)
    e = ad.clip(ad.sub(k.gumbel_ll1, ad.div(ad.sub(z, b1), sig)), -np.inf, 300.0)
    if region == "gumbel":
        if want == "neglog":
            return ad.exp(e)
        return ad.sub(e, ad.log(sig))
    # blend region
    w = ad.div(ad.sub(z, b1), width)
    pw = ad.betainc(w, k.cfg.c1, k.cfg.c2)
    A = ad.exp(e)
    t = ad.add(k.la, ad.div(ad.mul(k.D, ad.sub(z, q)), s))
    logt = ad.log(t)
    B = ad.exp(ad.div(ad.neg(logt), xi))
    one_minus = ad.sub(1.0, pw)
    if want == "neglog":
        return ad.add(ad.mul(one_minus, A), ad.mul(pw, B))
    frechet_rate = ad.mul(ad.div(k.D, ad.mul(xi, s)),
                          ad.exp(ad.mul(ad.neg(ad.add(ad.reciprocal(xi), 1.0)), logt)))
    lam = ad.add(ad.div(ad.mul(one_minus, A), sig), ad.mul(pw, frechet_rate))
    lam = ad.sub(lam, ad.mul(ad.div(ad.betapdf(w, k.cfg.c1, k.cfg.c2), width), ad.sub(B, A)))
    return lam  # caller takes the log after screening non-positive values


def _regions(zv, q, s, k):
    b1, b2 = _bgev_bounds_values(q, s, k)
    hi = zv >= b2
    lo = zv <= b1
    mid = ~(hi | lo)
    return {"frechet": hi, "gumbel": lo, "blend": mid}


def _bgev_sum(z, q, s, k: _Consts, want: str):
    """Sum over cells of -log G_b(z) (want='neglog') or log(g_b/G_b) ('loglam')."""
    zv = np.asarray(z, dtype=np.float64)
    total = 0.0
    for region, sel in _regions(zv, q, s, k).items():
        idx = np.flatnonzero(sel)
        if idx.size == 0:
            continue
        term = _region_terms(zv[idx], _take(q, idx), _take(s, idx), k, region, want)
        if want == "loglam" and region == "blend":
            lam_v = value_of(term)
            good = np.flatnonzero(lam_v > 0)
            n_bad = lam_v.size - good.size
            term = ad.log(_take(term, good)) if good.size < lam_v.size else ad.log(term)
            total = ad.add(total, LOG_DENSITY_FLOOR * n_bad)
        total = ad.add(total, ad.sum_(term))
    return total


def _bgev_array(z, q, s, k: _Consts, want: str) -> np.ndarray:
    zv = np.asarray(z, dtype=np.float64)
    shape = np.broadcast_shapes(zv.shape, np.shape(value_of(q)), np.shape(value_of(s)))
    zf = np.broadcast_to(zv, shape).ravel()
    qf = np.broadcast_to(value_of(q), shape).ravel()
    sf = np.broadcast_to(value_of(s), shape).ravel()
    out = np.empty(zf.shape)
    for region, sel in _regions(zf, qf, sf, k).items():
        idx = np.flatnonzero(sel)
        if idx.size == 0:
            continue
        term = np.asarray(_region_terms(zf[idx], qf[idx], sf[idx], k, region, want))
        if want == "loglam" and region == "blend":
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(term > 0, np.log(np.where(term > 0, term, 1.0)), LOG_DENSITY_FLOOR)
        out[idx] = term
    return out.reshape(shape)


def bgev_bounds(q: QuantileParams, cfg: BGevConfig = BGevConfig()):
    """Blending interval (b1, b2) = (G^-1(p_b1), G^-1(p_b2))."""
    _check_xi(q.xi)
    k = _Consts(q.xi, cfg, q.alpha, q.beta)
    return _bgev_bounds_values(q.q_alpha, q.s_beta, k)


def bgev_gumbel_params(q: QuantileParams, cfg: BGevConfig = BGevConfig()):
    """(q~_alpha, s~_beta) of the Gumbel lower tail, fixed by continuity at b1 and b2."""
    b1, b2 = bgev_bounds(q, cfg)
    l1, l2 = _loglog(cfg.p_b1), _loglog(cfg.p_b2)
    la = _loglog(q.alpha)
    qt = b1 - (b2 - b1) * (la - l1) / (l1 - l2)
    st = (b2 - b1) * (_loglog(q.beta / 2) - _loglog(1 - q.beta / 2)) / (l1 - l2)
    return qt, st


def bgev_neglogcdf(z, q: QuantileParams, cfg: BGevConfig = BGevConfig()):
    _check_xi(q.xi)
    k = _Consts(q.xi, cfg, q.alpha, q.beta)
    return _bgev_array(z, q.q_alpha, q.s_beta, k, "neglog")


def bgev_cdf(z, q: QuantileParams, cfg: BGevConfig = BGevConfig()):
    return np.exp(-bgev_neglogcdf(z, q, cfg))


def bgev_log_survival(z, q: QuantileParams, cfg: BGevConfig = BGevConfig(), power: float = 1.0):
    """log(1 - G_b(z)^power), accurate far into the upper tail."""
    nl = bgev_neglogcdf(z, q, cfg) * power
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-nl))


def bgev_logpdf(z, q: QuantileParams, cfg: BGevConfig = BGevConfig()):
    _check_xi(q.xi)
    k = _Consts(q.xi, cfg, q.alpha, q.beta)
    loglam = _bgev_array(z, q.q_alpha, q.s_beta, k, "loglam")
    neglog = _bgev_array(z, q.q_alpha, q.s_beta, k, "neglog")
    return np.where(loglam <= LOG_DENSITY_FLOOR, LOG_DENSITY_FLOOR, loglam - neglog)


def bgev_quantile(prob, q: QuantileParams, cfg: BGevConfig = BGevConfig(), tol: float = 1e-12):
    """Inverse of the bGEV cdf; closed form outside the blend, bisection inside."""
    prob = np.asarray(prob, dtype=np.float64)
    if np.any((prob <= 0) | (prob >= 1)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    shape = np.broadcast_shapes(prob.shape, np.shape(q.q_alpha), np.shape(q.s_beta))
    pf = np.broadcast_to(prob, shape).ravel()
    qa = np.broadcast_to(np.asarray(q.q_alpha, dtype=np.float64), shape).ravel()
    sb = np.broadcast_to(np.asarray(q.s_beta, dtype=np.float64), shape).ravel()
    k = _Consts(q.xi, cfg, q.alpha, q.beta)
    la, D = k.v["la"], k.v["D"]
    out = np.empty_like(pf)
    upper = pf >= cfg.p_b2
    lp = (-np.log(pf[upper])) ** (-q.xi)
    out[upper] = qa[upper] + sb[upper] * (lp - la) / D
    b1, b2 = _bgev_bounds_values(qa, sb, k)
    lower = pf <= cfg.p_b1
    sig = (b2 - b1) / k.dL
    out[lower] = b1[lower] + sig[lower] * (k.gumbel_ll1 - np.log(-np.log(pf[lower])))
    mid = ~(upper | lower)
    if np.any(mid):
        lo, hi = b1[mid].copy(), b2[mid].copy()
        target = -np.log(pf[mid])
        qm, sm = qa[mid], sb[mid]
        for _ in range(200):
            x = 0.5 * (lo + hi)
            val = _bgev_array(x, qm, sm, k, "neglog")
            below = val > target  # cdf(x) < p
            lo = np.where(below, x, lo)
            hi = np.where(below, hi, x)
            if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
                break
        else:
            raise RuntimeError("bisection for the bGEV quantile did not converge")
        out[mid] = 0.5 * (lo + hi)
    return out.reshape(shape) if shape else float(out[0])


# ---------------------------------------------------------------------------
# point-process likelihood


def _flat(x, shape):
    if isinstance(x, ad.Tensor):
        if x.shape == shape:
            return ad.reshape(x, (-1,))
        if x.size == 1:
            return x
        raise ValueError(f"parameter grid {x.shape} does not match response {shape}")
    arr = np.asarray(x, dtype=np.float64)
    return np.broadcast_to(arr, shape).ravel()


def _gev_terms(z, q, s, k: _Consts, want: str):
    zv = np.asarray(z, dtype=np.float64)
    t_v = k.v["la"] + k.v["D"] * (zv - value_of(q)) / value_of(s)
    if np.any(t_v <= 0):
        bad = int(np.sum(t_v <= 0))
        raise DomainError(f"{bad} value(s) lie below the GEV lower endpoint; "
                          "the classical point-process likelihood cannot be evaluated")
    return _region_terms(zv, q, s, k, "frechet", want)


def pp_nll(y, q, s, xi, ctx: PpContext, cfg: BGevConfig = BGevConfig(),
           variant: str = "bgev", observed=None, alpha: float = 0.5, beta: float = 0.5):
    """Point-process negative log-likelihood summed over observed cells.

    Each observed cell contributes ``(1/n_y) * (-log G(u))`` and, when
    ``y > u``, ``-log(g(y) / G(y))``, where G is the bGEV (``variant='bgev'``)
    or the GEV (``variant='gev'``) in the (q_alpha, s_beta, xi)
    parametrisation.  Masked cells contribute nothing.  ``q``, ``s`` may be
    tensors with the response's shape, ``xi`` a scalar tensor.
    """
    if variant not in ("bgev", "gev"):
        raise ValueError(f"unknown variant {variant!r}")
    _check_xi(xi)
    if variant == "bgev" and not float(value_of(xi)) < 1.0:
        raise ValueError("the bGEV point process is fitted with xi in (0, 1)")
    y = np.asarray(y, dtype=np.float64)
    shape = y.shape
    u = np.broadcast_to(np.asarray(ctx.u, dtype=np.float64), shape)
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, dtype=bool) & np.isfinite(y))
    idx = np.flatnonzero(obs.ravel())
    if idx.size == 0:
        return 0.0
    yo, uo = y.ravel()[idx], u.ravel()[idx]
    if not np.all(np.isfinite(uo)):
        raise ValueError("threshold u must be finite wherever the response is observed")
    qf, sf = _flat(q, shape), _flat(s, shape)
    qo = _take(qf, idx) if np.size(value_of(qf)) > 1 else qf
    so = _take(sf, idx) if np.size(value_of(sf)) > 1 else sf
    qo = qo if np.size(value_of(qo)) == idx.size else ad.mul(qo, np.ones(idx.size))
    so = so if np.size(value_of(so)) == idx.size else ad.mul(so, np.ones(idx.size))
    k = _Consts(xi, cfg, alpha, beta)
    exc = np.flatnonzero(yo > uo)
    if variant == "gev":
        # every observed value must be inside the support
        _gev_terms(yo, qo, so, k, "neglog")
        exposure = ad.sum_(_gev_terms(uo, qo, so, k, "neglog"))
        density = (ad.sum_(_gev_terms(yo[exc], _take(qo, exc), _take(so, exc), k, "loglam"))
                   if exc.size else 0.0)
    else:
        exposure = _bgev_sum(uo, qo, so, k, "neglog")
        density = _bgev_sum(yo[exc], _take(qo, exc), _take(so, exc), k, "loglam") if exc.size else 0.0
    return ad.sub(ad.mul(exposure, 1.0 / ctx.n_y), density)


# ---------------------------------------------------------------------------
# generalised Pareto


def gpd_cdf(z, p: GpdParams):
    """P(Z <= z) = 1 - (1 + xi z / sigma_u)^(-1/xi); exponential when xi == 0."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise DomainError("GPD support starts at 0")
    if p.xi < 0 and np.any(z > -p.sigma_u / p.xi):
        raise DomainError("value above the GPD upper endpoint")
    if abs(p.xi) < XI_ZERO:
        return -np.expm1(-z / p.sigma_u)
    return -np.expm1(-np.log1p(p.xi * z / p.sigma_u) / p.xi)


def gpd_quantile(prob, p: GpdParams):
    prob = np.asarray(prob, dtype=np.float64)
    if np.any((prob < 0) | (prob >= 1)):
        raise ValueError("probability must lie in [0, 1)")
    if abs(p.xi) < XI_ZERO:
        return -p.sigma_u * np.log1p(-prob)
    return p.sigma_u * np.expm1(-p.xi * np.log1p(-prob)) / p.xi
