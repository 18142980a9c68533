"""Training losses: bGEV point-process objective, tilted loss and Bernoulli log-loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .evt import BGevConfig, PpContext, pp_nll
from .pinn.surface import PinnModel

PROB_CLAMP = 1e-12


def tilted_loss(y, q, tau: float, observed=None):
    """Mean over observed cells of tau (y - q)_+ + (1 - tau) (q - y)_+."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    y = np.asarray(y, dtype=np.float64)
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
    idx = np.flatnonzero(obs.ravel())
    if idx.size == 0:
        return 0.0
    qf = ad.reshape(q, (-1,)) if np.size(value_of(q)) == y.size else ad.mul(q, np.ones(y.size))
    r = ad.sub(y.ravel()[idx], ad.take(qf, idx) if isinstance(qf, ad.Tensor) else qf[idx])
    loss = ad.add(ad.mul(tau, ad.relu(r)), ad.mul(1.0 - tau, ad.relu(ad.neg(r))))
    return ad.mul(ad.sum_(loss), 1.0 / idx.size)


def bernoulli_loss(y, p, observed=None):
    """Mean of -[y log p + (1 - y) log(1 - p)] with p clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=np.float64)
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
    idx = np.flatnonzero(obs.ravel())
    if idx.size == 0:
        return 0.0
    yo = y.ravel()[idx]
    if np.any((yo != 0) & (yo != 1)):
        raise ValueError("Bernoulli responses must be 0 or 1")
    pf = ad.reshape(p, (-1,)) if np.size(value_of(p)) == y.size else ad.mul(p, np.ones(y.size))
    po = ad.clip(ad.take(pf, idx) if isinstance(pf, ad.Tensor) else pf[idx], PROB_CLAMP, 1 - PROB_CLAMP)
    ll = ad.add(ad.mul(yo, ad.log(po)), ad.mul(1.0 - yo, ad.log(ad.sub(1.0, po))))
    return ad.mul(ad.sum_(ll), -1.0 / idx.size)


def bgev_pp_objective(model: PinnModel, params: dict, feats: dict, y, ctx: PpContext,
                      cfg: BGevConfig = BGevConfig(), observed=None, variant: str = "bgev",
                      scale: float = 1.0):
    """pp_nll of the model's (q, s, xi) surfaces plus the spline smoothing penalty."""
    theta = model.theta(params, feats)
    nll = pp_nll(y, theta["q"], theta["s"], theta["xi"], ctx, cfg, variant, observed)
    return ad.add(ad.mul(nll, scale), model.penalty(params))


@dataclass
class LossSpec:
    """Which loss a model is trained with.

    ``kind`` is 'bgev_pp', 'tilted' (with level ``tau``) or 'bernoulli'.
    """

    kind: str
    tau: float = 0.8
    variant: str = "bgev"
    n_y: int = 1
    bgev: BGevConfig = field(default_factory=BGevConfig)

    def __post_init__(self):
        if self.kind not in ("bgev_pp", "tilted", "bernoulli"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "tilted" and not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")


def _subset_features(feats: dict, rows: np.ndarray) -> dict:
    out = {"grid": (rows.size,), "valid": feats["valid"].ravel()[rows]}
    for key, val in feats.items():
        if isinstance(val, dict):
            out[key] = {k: v[rows] for k, v in val.items()}
    return out


class Objective:
    """A loss bound to a model and a dataset; callable on a parameter dict.

    ``observed`` marks the cells the loss may read (training cells); all
    other responses are never touched.  ``rows`` restricts evaluation to a
    minibatch of a tabular (1-D grid) dataset, rescaling summed losses so
    they estimate the full-data value.  ``offsets`` maps surface names to
    fixed terms added to the predictor before the link.
    """

    def __init__(self, model: PinnModel, X, y, spec: LossSpec, observed=None, u=None, offsets=None):
        self.model = model
        self.spec = spec
        self.feats = model.features(X)
        for name, off in (offsets or {}).items():
            self.feats[name]["offset"] = np.asarray(off, dtype=np.float64).reshape(self.feats["grid"])
        y = np.asarray(y, dtype=np.float64)
        obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
        obs &= self.feats["valid"]
        # responses outside the observed set are replaced so they cannot leak in
        self.y = np.where(obs, y, 0.0)
        self.observed = obs
        self.u = None if u is None else np.asarray(u, dtype=np.float64)
        if spec.kind == "bgev_pp":
            if self.u is None:
                raise ValueError("the point-process objective needs a frozen threshold grid u")
            self.u = np.where(obs, np.broadcast_to(self.u, y.shape), 0.0)
        self.n_cells = int(obs.sum())

    def __call__(self, params: dict, rows=None):
        feats, y, obs, u = self.feats, self.y, self.observed, self.u
        scale = 1.0
        if rows is not None:
            rows = np.asarray(rows)
            if len(feats["grid"]) != 1:
                raise ValueError("minibatches are only supported for tabular (1-D) data")
            feats = _subset_features(feats, rows)
            y, obs = y[rows], obs[rows]
            u = None if u is None else u[rows]
            scale = self.n_cells / max(int(obs.sum()), 1)
        m = self.model
        if self.spec.kind == "bgev_pp":
            ctx = PpContext(self.spec.n_y, u)
            return bgev_pp_objective(m, params, feats, y, ctx, self.spec.bgev, obs,
                                     self.spec.variant, scale)
        name = m.spec.surfaces[0].name
        theta = m.theta(params, feats)[name]
        if self.spec.kind == "tilted":
            return ad.add(tilted_loss(y, theta, self.spec.tau, obs), m.penalty(params))
        return ad.add(bernoulli_loss(y, theta, obs), m.penalty(params))

    def value(self, params: dict) -> float:
        return float(value_of(self(params)))
