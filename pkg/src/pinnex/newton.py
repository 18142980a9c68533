"""Newton fits of network-free point-process models.

When q and log s are linear in their parameters (intercept, linear and
spline weights) the likelihood is a sum of per-cell terms in
(q_i, log s_i, xi).  The Hessian is then assembled from per-cell second
derivatives, obtained by differencing tape gradients taken with respect to
the per-cell predictors, at a cost independent of the number of weights.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .evt import BGevConfig, PpContext, pp_nll
from .pinn.surface import PinnModel

# steps that push the shape's logit below this (xi < 1e-13) are rejected
XI_LOGIT_FLOOR = -30.0


def _design(model: PinnModel, feats: dict, name: str) -> tuple[np.ndarray, list[str]]:
    f = feats[name]
    n = int(np.prod(feats["grid"]))
    blocks, keys = [np.ones((n, 1))], [f"{name}.eta0"]
    if "lin" in f:
        blocks.append(f["lin"])
        keys.append(f"{name}.eta")
    if "basis" in f:
        blocks.append(f["basis"])
        keys.append(f"{name}.omega")
    return np.hstack(blocks), keys


class PpNewton:
    """Exact-Hessian trust-region fit of a (q, s, xi) model without networks."""

    def __init__(self, model: PinnModel, X, y, u, observed=None, n_y: int = 1, offsets=None,
                 cfg: BGevConfig = BGevConfig(), h: float = 1e-5):
        spec = model.spec
        if any(s.partition.network for s in spec.surfaces):
            raise ValueError("Newton fits need network-free surfaces")
        if spec.surface("q").link != "identity" or spec.surface("s").link != "exp":
            raise ValueError("expected identity-link q and exp-link s")
        self.model = model
        feats = model.features(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool).ravel() & np.isfinite(y))
        obs &= feats["valid"].ravel()
        self.y = np.where(obs, y, 0.0)
        self.obs = obs
        uu = np.broadcast_to(np.asarray(u, dtype=np.float64), np.shape(y)).ravel()
        self.ctx = PpContext(n_y, np.where(obs, uu, 0.0))
        self.cfg = cfg
        self.h = h
        self.Fq, kq = _design(model, feats, "q")
        self.Fs, ks = _design(model, feats, "s")
        self.keys = kq + ks + ["xi.eta0"]
        offsets = offsets or {}
        self.off_q = np.asarray(offsets.get("q", 0.0), dtype=np.float64).ravel()
        self.off_s = np.asarray(offsets.get("s", 0.0), dtype=np.float64).ravel()
        self.nq, self.ns = self.Fq.shape[1], self.Fs.shape[1]
        # smoothing penalties act on the spline blocks
        self.S = np.zeros((self.nq + self.ns + 1,) * 2)
        for name, start in (("q", 0), ("s", self.nq)):
            sf = spec.surface(name)
            if sf.partition.additive and sf.smoothing > 0:
                k = sf.n_knots
                base = start + 1 + len(sf.partition.linear)
                for j, P in enumerate(model.states[name].penalty):
                    sl = slice(base + j * k, base + (j + 1) * k)
                    self.S[sl, sl] += sf.smoothing * P

    # -- parameter packing -----------------------------------------------------

    def pack(self, params: dict) -> np.ndarray:
        return np.concatenate([np.ravel(params[k]) for k in self.keys])

    def unpack(self, v: np.ndarray) -> dict:
        out, i = {}, 0
        for k in self.keys:
            shape = self._shape(k)
            n = int(np.prod(shape)) if shape else 1
            out[k] = v[i:i + n].reshape(shape)
            i += n
        return out

    def _shape(self, key: str):
        return self.model.spec.param_shapes()[key]

    # -- per-cell derivatives ----------------------------------------------------------

    def _cell_grads(self, a, b, x0):
        leaves = [Tensor(a, requires_grad=True), Tensor(b, requires_grad=True),
                  Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)]
        with Tape() as tape:
            loss = pp_nll(self.y, leaves[0], ad.exp(leaves[1]), ad.sigmoid(leaves[2]), self.ctx, self.cfg,
                          observed=self.obs)
            ga, gb, gx = tape.gradient(loss, leaves)
        return float(loss.value), ga, gb, float(gx)

    def _predictors(self, v):
        bq, bs, x0 = v[:self.nq], v[self.nq:self.nq + self.ns], v[-1]
        return self.Fq @ bq + self.off_q, self.Fs @ bs + self.off_s, x0

    def loss_grad(self, v):
        a, b, x0 = self._predictors(v)
        loss, ga, gb, gx = self._cell_grads(a, b, x0)
        grad = np.concatenate([self.Fq.T @ ga, self.Fs.T @ gb, [gx]]) + self.S @ v
        return loss + 0.5 * v @ self.S @ v, grad

    def hessian(self, v):
        a, b, x0 = self._predictors(v)
        h = self.h
        d = {}
        for which in ("a", "b", "x"):
            plus = (a + h if which == "a" else a, b + h if which == "b" else b, x0 + h if which == "x" else x0)
            minus = (a - h if which == "a" else a, b - h if which == "b" else b, x0 - h if which == "x" else x0)
            _, ga1, gb1, gx1 = self._cell_grads(*plus)
            _, ga0, gb0, gx0 = self._cell_grads(*minus)
            d[which] = ((ga1 - ga0) / (2 * h), (gb1 - gb0) / (2 * h), (gx1 - gx0) / (2 * h))
        laa, lab = d["a"][0], 0.5 * (d["a"][1] + d["b"][0])
        lbb = d["b"][1]
        lax, lbx, lxx = d["x"][0], d["x"][1], d["x"][2]
        Fq, Fs = self.Fq, self.Fs
        H = np.empty((self.nq + self.ns + 1,) * 2)
        H[:self.nq, :self.nq] = Fq.T @ (laa[:, None] * Fq)
        H[:self.nq, self.nq:-1] = Fq.T @ (lab[:, None] * Fs)
        H[self.nq:-1, :self.nq] = H[:self.nq, self.nq:-1].T
        H[self.nq:-1, self.nq:-1] = Fs.T @ (lbb[:, None] * Fs)
        H[:self.nq, -1] = H[-1, :self.nq] = Fq.T @ lax
        H[self.nq:-1, -1] = H[-1, self.nq:-1] = Fs.T @ lbx
        H[-1, -1] = lxx
        return H + self.S

    # -- driver ------------------------------------------------------------------------

    def fit(self, params: dict, max_iter: int = 50, gtol: float = 1e-5) -> tuple[dict, dict]:
        cache = {}

        def fg(v):
            key = v.tobytes()
            if key not in cache:
                cache.clear()
                loss, grad = np.inf, None
                if v[-1] > XI_LOGIT_FLOOR:
                    try:
                        with np.errstate(all="ignore"):
                            loss, grad = self.loss_grad(v)
                    except ValueError:
                        pass
                # non-finite points are rejected by the trust region
                if grad is None or not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                    loss, grad = np.inf, np.zeros_like(v)
                cache[key] = (loss, grad)
            return cache[key]

        def hess(v):
            try:
                with np.errstate(all="ignore"):
                    H = self.hessian(v)
            except ValueError:
                return np.eye(v.size)
            return np.where(np.isfinite(H), H, 0.0)

        v0 = self.pack(params)
        v0[-1] = max(v0[-1], XI_LOGIT_FLOOR + 1.0)

        res = minimize(lambda v: fg(v)[0], v0, jac=lambda v: fg(v)[1], hess=hess,
                       method="trust-exact", options={"maxiter": max_iter, "gtol": gtol})
        out = dict(params)
        out.update(self.unpack(res.x))
        info = {"loss": float(res.fun), "iterations": int(res.nit), "converged": bool(res.success)}
        return out, info
