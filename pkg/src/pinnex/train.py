"""Adam training with save-best checkpointing, warm starts and threshold estimation."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step, value_of

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "pinnex-checkpoint-v1"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the last good report."""

    def __init__(self, message: str, report: "FitReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 1000
    stride: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    criterion: str = "training-loss"
    batch_size: int | None = None
    lr_final: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.stride < 1:
            raise ValueError("checkpoint stride must be at least 1")
        if self.criterion not in ("training-loss", "validation-loss"):
            raise ValueError(f"unknown selection criterion {self.criterion!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr_final is not None and not 0 < self.lr_final:
            raise ValueError("lr_final must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for an epoch (1-based): constant, or geometric decay to lr_final."""
        if self.lr_final is None or self.epochs <= 1:
            return self.lr
        frac = (epoch - 1) / (self.epochs - 1)
        return self.lr * (self.lr_final / self.lr) ** frac


@dataclass
class Checkpoint:
    params: dict
    epoch: int
    loss: float
    fingerprint: str
    adam: dict = field(default_factory=dict)

    def save(self, path: str) -> None:
        """Text header line (JSON metadata, shapes) then little-endian float64 payload."""
        names = sorted(self.params)
        arrays = [np.asarray(self.params[n], dtype="<f8") for n in names]
        header = {"magic": CHECKPOINT_MAGIC, "epoch": self.epoch, "loss": self.loss,
                  "fingerprint": self.fingerprint, "adam": self.adam,
                  "params": [[n, list(a.shape)] for n, a in zip(names, arrays)]}
        payload = b"".join(a.tobytes(order="C") for a in arrays)
        atomic_write(path, json.dumps(header, sort_keys=True).encode() + b"\n" + payload)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "rb") as fh:
            blob = fh.read()
        head, _, payload = blob.partition(b"\n")
        header = json.loads(head)
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        params, offset = {}, 0
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset * 8)
            params[name] = arr.reshape(shape).astype(np.float64)
            offset += n
        if offset * 8 != len(payload):
            raise ValueError(f"{path}: payload length does not match the header")
        return cls(params, header["epoch"], header["loss"], header["fingerprint"], header["adam"])


@dataclass
class FitReport:
    train_losses: list[float]
    val_losses: list[float]
    saves: list[tuple[int, float]]
    best: Checkpoint
    diverged: bool = False
    metrics: dict = field(default_factory=dict)

    @property
    def params(self) -> dict:
        return self.best.params

    def to_dict(self) -> dict:
        return {"train_losses": self.train_losses, "val_losses": self.val_losses,
                "saves": [list(s) for s in self.saves], "best_epoch": self.best.epoch,
                "best_loss": self.best.loss, "diverged": self.diverged, "metrics": self.metrics}


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def params_fingerprint(params: dict) -> str:
    """Hash of parameter names and shapes (the architecture, not the values)."""
    desc = sorted((k, list(np.shape(v))) for k, v in params.items())
    return hashlib.sha256(json.dumps(desc).encode()).hexdigest()


def _loss_and_grad(loss_fn, params: dict, rows=None):
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    with Tape() as tape:
        loss = loss_fn(leaves) if rows is None else loss_fn(leaves, rows)
        if not isinstance(loss, Tensor):
            # loss does not depend on the parameters
            return float(loss), {k: np.zeros_like(v) for k, v in params.items()}
        grads = tape.gradient(loss, leaves)
    return float(loss.value), grads


def fit(loss_fn, params: dict, config: FitConfig, validation=None, fingerprint: str | None = None,
        n_rows: int | None = None) -> FitReport:
    """Train ``params`` with Adam on ``loss_fn``.

    Every ``config.stride`` epochs the selection criterion (training or
    validation loss) is evaluated and the state saved iff it improves on the
    best saved value; the initial state is always saved first, so the
    returned checkpoint is the best saved state.  With ``batch_size`` set,
    ``loss_fn(params, rows)`` is called on shuffled minibatches of
    ``n_rows`` rows.
    """
    if config.criterion == "validation-loss" and validation is None:
        raise ValueError("validation-loss selection needs a validation objective")
    fingerprint = fingerprint or params_fingerprint(params)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    rng = np.random.default_rng(config.seed)
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)

    def criterion(p):
        fn = validation if config.criterion == "validation-loss" else loss_fn
        return float(value_of(fn(p)))

    init_loss = criterion(params)
    if not np.isfinite(init_loss):
        raise ValueError(f"loss is not finite at initialisation ({init_loss})")
    best = Checkpoint({k: v.copy() for k, v in params.items()}, 0, init_loss, fingerprint)
    saves = [(0, init_loss)]
    train_losses, val_losses = [], []
    batched = config.batch_size is not None
    if batched and n_rows is None:
        raise ValueError("minibatch training needs n_rows")

    for epoch in range(1, config.epochs + 1):
        state.lr = config.lr_at(epoch)
        if batched:
            order = rng.permutation(n_rows)
            batch_losses = []
            for start in range(0, n_rows, config.batch_size):
                rows = np.sort(order[start:start + config.batch_size])
                loss, grads = _loss_and_grad(loss_fn, params, rows)
                if not np.isfinite(loss):
                    break
                batch_losses.append(loss)
                params, state = adam_step(params, grads, state)
            epoch_loss = float(np.mean(batch_losses)) if np.isfinite(loss) else loss
        else:
            epoch_loss, grads = _loss_and_grad(loss_fn, params)
            if np.isfinite(epoch_loss):
                params, state = adam_step(params, grads, state)
        if not np.isfinite(epoch_loss):
            report = FitReport(train_losses, val_losses, saves, best, diverged=True)
            raise DivergenceError(f"non-finite loss at epoch {epoch}", report)
        train_losses.append(epoch_loss)
        if epoch % config.stride == 0:
            if validation is not None:
                val_losses.append(float(value_of(validation(params))))
            value = val_losses[-1] if config.criterion == "validation-loss" else criterion(params)
            if np.isfinite(value) and value < best.loss:
                best = Checkpoint({k: v.copy() for k, v in params.items()}, epoch, value, fingerprint,
                                  {"step": state.step})
                saves.append((epoch, value))
    log.debug("fit finished: best epoch %d loss %.6g", best.epoch, best.loss)
    return FitReport(train_losses, val_losses, saves, best)


def warm_start(checkpoint: Checkpoint, params: dict, fingerprint: str | None = None) -> dict:
    """Copy checkpoint values into a freshly initialised parameter dict of the same architecture.

    Optimiser state is not carried over; the next :func:`fit` starts Adam afresh.
    """
    if fingerprint is not None and checkpoint.fingerprint != fingerprint:
        raise ValueError("checkpoint fingerprint does not match the model")
    if params_fingerprint(checkpoint.params) != params_fingerprint(params):
        raise ValueError("checkpoint architecture does not match the model")
    return {k: np.array(v, dtype=np.float64) for k, v in checkpoint.params.items()}


def estimate_threshold(model, params: dict, X) -> np.ndarray:
    """Evaluate a fitted quantile model to obtain the frozen threshold grid u(s, t)."""
    from .pinn.surface import eval_theta

    theta = eval_theta(model, params, X)
    name = model.spec.surfaces[0].name
    return np.asarray(theta[name], dtype=np.float64)


def default_intercepts(y, observed=None) -> dict:
    """Intercept targets on the parameter scale: median response, its IQR, xi = 0.2."""
    y = np.asarray(y, dtype=np.float64)
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
    vals = y[obs]
    q25, q50, q75 = np.quantile(vals, [0.25, 0.5, 0.75])
    return {"q": float(q50), "s": float(max(q75 - q25, 1e-6)), "xi": 0.2}


def constant_pp_fit(y, u, observed=None, n_y: int = 1, epochs: int = 500, lr: float = 0.05,
                    cfg=None) -> dict:
    """Intercept-only bGEV point-process fit, used to start richer models near the data.

    Starts from :func:`default_intercepts` and runs full-batch Adam on
    (q, log s, logit xi); returns parameter-scale values.
    """
    from .evt import BGevConfig, PpContext, pp_nll

    cfg = cfg or BGevConfig()
    y = np.asarray(y, dtype=np.float64)
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
    start = default_intercepts(y, obs)
    uu = np.broadcast_to(np.asarray(u, dtype=np.float64), y.shape)
    # the exceedance values carry the information; start the location among them
    exc = y[obs & (y > uu)]
    if exc.size >= 4:
        lo, mid, hi = np.quantile(exc, [0.25, 0.5, 0.75])
        start["q"], start["s"] = float(np.quantile(uu[obs], 0.5)) - 2.0 * (hi - lo), float(hi - lo)
    params = {"q": np.array(start["q"]), "ls": np.array(np.log(start["s"])),
              "lx": np.array(np.log(0.2 / 0.8))}
    ctx = PpContext(n_y, np.where(obs, uu, 0.0))
    yy = np.where(obs, y, 0.0)
    scale = 1.0 / max(int(obs.sum()), 1)

    def loss(p):
        return ad.mul(pp_nll(yy, p["q"], ad.exp(p["ls"]), ad.sigmoid(p["lx"]), ctx, cfg,
                             observed=obs), scale)

    report = fit(loss, params, FitConfig(epochs=epochs, stride=10, lr=lr))
    best = report.params
    return {"q": float(best["q"]), "s": float(np.exp(best["ls"])),
            "xi": float(1.0 / (1.0 + np.exp(-best["lx"])))}


def aligned_start(model, X, y, u, rng: np.random.Generator, observed=None, n_y: int = 1,
                  epochs: int = 300, cfg=None) -> dict:
    """Starting parameters with the location surface following the threshold.

    The linear and spline weights of ``q`` come from a least-squares fit of
    the threshold ``u`` on their design; the constant point-process fit is then
    run on the residualised responses to set the intercepts.  Network weights
    keep their Glorot draw.
    """
    feats = model.features(X)
    y = np.asarray(y, dtype=np.float64)
    uu = np.broadcast_to(np.asarray(u, dtype=np.float64), y.shape)
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))
    obs = obs & feats["valid"].reshape(y.shape) if feats["valid"].shape == y.shape else obs
    fq = feats["q"]
    blocks = [fq[k] for k in ("lin", "basis") if k in fq]
    offset = np.zeros(y.size)
    coefs = []
    if blocks:
        design = np.hstack(blocks)
        rows = obs.reshape(-1)
        a = np.hstack([np.ones((rows.sum(), 1)), design[rows]])
        beta = np.linalg.lstsq(a, uu.reshape(-1)[rows], rcond=None)[0][1:]
        offset = design @ beta
        cut = np.cumsum([b.shape[1] for b in blocks])[:-1]
        coefs = np.split(beta, cut)
    offset = offset.reshape(y.shape)
    start = constant_pp_fit(np.where(obs, y - offset, np.nan), uu - offset, obs, n_y, epochs, cfg=cfg)
    params = model.init_params(rng, start)
    for key, c in zip([k for k in ("lin", "basis") if k in fq], coefs):
        params["q.eta" if key == "lin" else "q.omega"] = c
    return params

