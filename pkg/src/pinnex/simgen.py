"""Synthetic data: correlated Gaussian predictors, test functions and response laws.

Studies:

* ``B1-case1`` / ``B1-case2``: point-process responses whose q_alpha and
  s_beta combine known linear, cubic-additive and non-additive effects;
  case 2 removes the effects of x7 and x9.
* ``B2-lognormal`` / ``B2-gpd``: responses from laws outside the model.
* ``B3-linear`` / ``B3-additive`` / ``B3-nonlinear``: point-process
  responses with linear, additive or highly non-linear parameter surfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .evt import GpdParams, gpd_quantile

STUDIES = ("B1-case1", "B1-case2", "B2-lognormal", "B2-gpd", "B3-linear", "B3-additive", "B3-nonlinear")

# (d, pairwise correlation, shape, threshold probability)
_DEFAULTS = {
    "B1-case1": (10, 0.5, 0.2, 0.99),
    "B1-case2": (10, 0.5, 0.2, 0.99),
    "B2-lognormal": (10, 0.3, None, 0.95),
    "B2-gpd": (10, 0.3, None, 0.95),
    "B3-linear": (12, 0.3, 0.25, 0.95),
    "B3-additive": (12, 0.3, 0.25, 0.95),
    "B3-nonlinear": (12, 0.3, 0.25, 0.95),
}
B1_INTERCEPTS = (1.0, -0.5)
ALPHA = BETA = 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    study: str
    n: int
    seed: int = 0
    d: int | None = None
    rho: float | None = None
    coef_seed: int = 0

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; choose from {STUDIES}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        d, rho = self.dim, self.correlation
        if not -1.0 / (d - 1) < rho < 1.0:
            raise ValueError(f"correlation {rho} is not valid for d={d}")
        if d < _DEFAULTS[self.study][0]:
            raise ValueError(f"{self.study} needs at least {_DEFAULTS[self.study][0]} predictors")

    @property
    def dim(self) -> int:
        return self.d if self.d is not None else _DEFAULTS[self.study][0]

    @property
    def correlation(self) -> float:
        return self.rho if self.rho is not None else _DEFAULTS[self.study][1]

    @property
    def xi(self) -> float | None:
        return _DEFAULTS[self.study][2]

    @property
    def p_u(self) -> float:
        return _DEFAULTS[self.study][3]


def sample_predictors(n: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. N(0, R) with unit variances and all correlations rho."""
    if not -1.0 / (d - 1) < rho < 1.0:
        raise ValueError(f"correlation {rho} is not valid for d={d}")
    if rho >= 0:
        common = rng.standard_normal((n, 1))
        return math.sqrt(rho) * common + math.sqrt(1.0 - rho) * rng.standard_normal((n, d))
    corr = np.full((d, d), rho) + (1.0 - rho) * np.eye(d)
    return rng.standard_normal((n, d)) @ np.linalg.cholesky(corr).T


# ---------------------------------------------------------------------------
# test functions


def m_nonadditive_1(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3, x4, x5, x6 = (x[..., j] for j in range(6))
    return 0.1 * (x1 * x2 + x2 * (1 - np.cos(np.pi * x2 * x3))
                  + 2 * np.sin(x3) / (np.abs(x3 - x4) + 2)
                  + 0.2 * (x4 + x4 * x5 / 2) ** 2
                  - np.sqrt(x5 ** 2 + x6 ** 2 + 2)
                  + np.exp(-12 + np.sum(x[..., :6], axis=-1) / 10))


def m_nonadditive_2(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3, x4, x5 = (x[..., j] for j in range(5))
    return 0.1 * (0.7 * x1 * x2 - 5 + x2 * (1 - np.cos(np.pi * x2 * x3))
                  + 3 * np.sin(x3) / (np.abs(x3 - x4) + 2)
                  + 0.2 * (x4 + x4 * x5 / 2 - 1) ** 2
                  + np.exp(-18 + np.sum(x[..., :6], axis=-1) / 10))


@dataclass(frozen=True)
class B1Truth:
    """Known linear coefficients on (x7, x8) and additive curves of x9, x10 per parameter."""

    eta: dict
    additive: dict

    def linear(self, name: str, x) -> np.ndarray:
        x = np.asarray(x)
        return self.eta[name][0] * x[..., 6] + self.eta[name][1] * x[..., 7]

    def additive_sum(self, name: str, x) -> np.ndarray:
        x = np.asarray(x)
        f9, f10 = self.additive[name]
        return f9(x[..., 8]) + f10(x[..., 9])


def b1_truth(case: int) -> B1Truth:
    if case == 1:
        eta = {"q": (0.8, 2.0), "s": (0.4, -0.2)}
        additive = {
            "q": (lambda v: 0.2 * (0.1 * v ** 3 - v ** 2 + v), lambda v: 0.2 * (0.4 * v ** 3 - 2 * v)),
            "s": (lambda v: 0.2 * (0.2 * v ** 3 - 0.3 * v ** 2 + v),
                  lambda v: 0.2 * (-0.1 * v ** 3 + 0.2 * v ** 2 - 0.5 * v)),
        }
    elif case == 2:
        eta = {"q": (0.0, -0.5), "s": (0.0, 0.3)}
        zero = lambda v: 0.0 * np.asarray(v, dtype=np.float64)  # noqa: E731
        additive = {
            "q": (zero, lambda v: 1.0 * np.asarray(v, dtype=np.float64)),
            "s": (zero, lambda v: 0.2 * (0.1 * v ** 3 - 0.3 * v ** 2 - v)),
        }
    else:
        raise ValueError("B1 has cases 1 and 2")
    return B1Truth(eta, additive)


def eval_test_functions(x, study: str) -> dict[str, np.ndarray]:
    """m_N^1, m_N^2 and, for B1 studies, m_L and m_A of both parameters."""
    x = np.asarray(x, dtype=np.float64)
    out = {"m_N1": m_nonadditive_1(x), "m_N2": m_nonadditive_2(x)}
    if study.startswith("B1"):
        truth = b1_truth(1 if study.endswith("1") else 2)
        for name, i in (("q", 1), ("s", 2)):
            out[f"m_L{i}"] = truth.linear(name, x)
            out[f"m_A{i}"] = truth.additive_sum(name, x)
    return out


# ---------------------------------------------------------------------------
# frozen coefficient draws of the B3 studies


def b3_coefficients(coef_seed: int, d: int = 12) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([coef_seed, 2024])
    wide = np.round(np.arange(-10, 11) / 10, 1)
    narrow = np.round(np.arange(-5, 6) / 10, 1)
    return {"eta1": rng.choice(wide, d), "eta2": rng.choice(narrow, d),
            "eta3": rng.choice(wide, 3 * d), "eta4": rng.choice(narrow, 3 * d)}


def cubic_features(x) -> np.ndarray:
    """(x1^3, x1^2, x1, ..., xd^3, xd^2, xd)."""
    x = np.asarray(x, dtype=np.float64)
    return np.stack([x ** 3, x ** 2, x], axis=-1).reshape(x.shape[:-1] + (3 * x.shape[-1],))


# ---------------------------------------------------------------------------
# responses


def gev_quantile_qs(p, q, s, xi: float, alpha: float = ALPHA, beta: float = BETA):
    """GEV quantile in the (q_alpha, s_beta, xi) parametrisation, xi > 0."""
    l = lambda v: (-np.log(v)) ** (-xi)  # noqa: E731
    D = l(1 - beta / 2) - l(beta / 2)
    return q + s * (l(np.asarray(p, dtype=np.float64)) - l(alpha)) / D


def sample_pp_response(q, s, xi: float, p_u: float, rng: np.random.Generator):
    """Responses from the point process with threshold u = G^-1(p_u).

    A fraction 1 - p_u of draws exceed u, with survivor
    log G(y) / log G(u) above it; the rest are uniform on [u - s, u).
    Returns (y, u).
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    u = gev_quantile_qs(p_u, q, s, xi)
    U = rng.uniform(size=q.shape)
    exceed = U >= p_u
    v = np.where(exceed, (1.0 - U) / (1.0 - p_u), 1.0)
    # log G(y) = v log G(u)
    y_exc = gev_quantile_qs(np.exp(v * np.log(p_u)), q, s, xi)
    y_sub = u - s * (p_u - U) / p_u
    return np.where(exceed, y_exc, y_sub), u


@dataclass
class SimResult:
    spec: ScenarioSpec
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    truth: dict
    manifest: dict = field(default_factory=dict)

    def true_quantile(self, p) -> np.ndarray:
        """True conditional quantiles, shape (n, len(p))."""
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        t = self.truth
        if t["law"] == "lognormal":
            return np.exp(t["mu"][:, None] + t["sigma"] * stats.norm.ppf(p)[None, :])
        if t["law"] == "gpd":
            return np.stack([gpd_quantile(p, GpdParams(1.0, t["xi"])) * sc for sc in t["scale"]])
        return gev_quantile_qs(p[None, :], t["q"][:, None], t["s"][:, None], t["xi"])


def simulate(spec: ScenarioSpec) -> SimResult:
    """Draw predictors and responses for one replicate set."""
    rng = np.random.default_rng([spec.seed, STUDIES.index(spec.study)])
    x = sample_predictors(spec.n, spec.dim, spec.correlation, rng)
    study = spec.study
    manifest = {"study": study, "n": spec.n, "d": spec.dim, "rho": spec.correlation,
                "seed": spec.seed, "p_u": spec.p_u}
    if study.startswith("B1"):
        truth_fns = b1_truth(1 if study == "B1-case1" else 2)
        q = (B1_INTERCEPTS[0] + truth_fns.linear("q", x) + truth_fns.additive_sum("q", x)
             + m_nonadditive_1(x))
        s = np.exp(B1_INTERCEPTS[1] + truth_fns.linear("s", x) + truth_fns.additive_sum("s", x)
                   + m_nonadditive_2(x))
        y, u = sample_pp_response(q, s, spec.xi, spec.p_u, rng)
        truth = {"law": "pp", "q": q, "s": s, "xi": spec.xi}
        manifest.update({"eta0_q": B1_INTERCEPTS[0], "eta0_s": B1_INTERCEPTS[1], "xi": spec.xi,
                         "eta_q": list(truth_fns.eta["q"]), "eta_s": list(truth_fns.eta["s"])})
    elif study == "B2-lognormal":
        mu = 6.0 + 0.2 * m_nonadditive_1(x)
        sigma = 0.5
        y = np.exp(mu + sigma * rng.standard_normal(spec.n))
        u = np.exp(mu + sigma * stats.norm.ppf(spec.p_u))
        truth = {"law": "lognormal", "mu": mu, "sigma": sigma}
    elif study == "B2-gpd":
        scale = np.exp(0.5 - 3.0 * m_nonadditive_2(x))
        y = scale * gpd_quantile(rng.uniform(size=spec.n), GpdParams(1.0, 0.1))
        u = scale * gpd_quantile(spec.p_u, GpdParams(1.0, 0.1))
        truth = {"law": "gpd", "scale": scale, "xi": 0.1}
    else:
        coefs = b3_coefficients(spec.coef_seed, spec.dim)
        if study == "B3-linear":
            q = 1.0 + x @ coefs["eta1"]
            s = np.exp(0.5 + x @ coefs["eta2"])
            used = {"eta1": coefs["eta1"].tolist(), "eta2": coefs["eta2"].tolist()}
        elif study == "B3-additive":
            xs = cubic_features(x)
            q = 15.0 + xs @ coefs["eta3"]
            s = np.exp(1.0 - 0.05 * xs @ coefs["eta4"])
            used = {"eta3": coefs["eta3"].tolist(), "eta4": coefs["eta4"].tolist()}
        else:
            a, b = x[:, :6], x[:, 6:12]
            q = 20.0 + 25.0 * (m_nonadditive_1(a) + np.abs(m_nonadditive_1(b)))
            s = np.exp(0.5 - (m_nonadditive_2(a) - m_nonadditive_2(b)))
            used = {}
        y, u = sample_pp_response(q, s, spec.xi, spec.p_u, rng)
        truth = {"law": "pp", "q": q, "s": s, "xi": spec.xi}
        manifest.update({"xi": spec.xi, "coef_seed": spec.coef_seed, "coefficients": used})
    return SimResult(spec, x, y, u, truth, manifest)
