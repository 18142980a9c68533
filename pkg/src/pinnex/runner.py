"""Run orchestration: one config in, a directory of reproducible artifacts out.

Every run writes ``manifest.json`` (config echo, seeds, package version,
input and output hashes) and ``report.json``; both are serialised with
sorted keys and no timestamps so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .autodiff import grad_check
from .config import RunConfig, _merge, layers_from, model_spec_from
from .data import GridDataset, load_dataset, save_dataset
from .evt import BGevConfig, QuantileParams, bgev_quantile
from .folds import make_cv_folds
from .forms import single_surface_spec
from .metrics import (ScorePanel, aic, pit_exponential, pp_cdf_table, pp_predictive_cdf, qq_table, smad,
                      twcrps, twcrps_thresholds)
from .objectives import LossSpec, Objective
from .pinn.surface import PinnModel, count_params, eval_theta
from .resample import BootstrapPlan, envelope, stationary_bootstrap
from .simgen import ScenarioSpec, simulate
from .train import Checkpoint, FitConfig, aligned_start, atomic_write, fit, warm_start

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# serialisation


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def dumps(obj) -> bytes:
    return (json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n").encode()


def write_json(path: str, obj) -> None:
    atomic_write(path, dumps(obj))


def write_table(path: str, columns: dict) -> None:
    """Columnar CSV from equal-length columns (floats written with repr)."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*cols):
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else
                    (str(v) if not isinstance(v, np.integer) else int(v)) for v in row])
    atomic_write(path, buf.getvalue().encode())


def read_table(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            out[name] = np.array(vals)
    return out


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# fitted components


@dataclass
class Fitted:
    """A trained model with its preprocessing and best checkpoint."""

    model: PinnModel
    params: dict
    report: dict

    def save(self, out: str, stem: str) -> None:
        write_json(os.path.join(out, f"{stem}.model.json"), self.model.state_dict())
        Checkpoint(self.params, int(self.report.get("best_epoch", 0)), float(self.report.get("best_loss", 0.0)),
                   self.model.spec.fingerprint()).save(os.path.join(out, f"{stem}.ckpt"))

    @classmethod
    def load(cls, out: str, stem: str) -> "Fitted":
        with open(os.path.join(out, f"{stem}.model.json")) as fh:
            model = PinnModel.from_state_dict(json.load(fh))
        ckpt = Checkpoint.load(os.path.join(out, f"{stem}.ckpt"))
        if ckpt.fingerprint != model.spec.fingerprint():
            raise ValueError(f"{stem}: checkpoint does not belong to the saved model spec")
        return cls(model, ckpt.params, {"best_epoch": ckpt.epoch, "best_loss": ckpt.loss})


def _fit_config(cfg: RunConfig, seed: int, epochs=None, criterion=None, n_rows=None) -> FitConfig:
    tr = cfg["training"]
    batch = None
    if tr.get("batch_rows") and n_rows and tr["batch_rows"] < n_rows:
        batch = int(tr["batch_rows"])
    elif tr.get("batch_fraction") and n_rows:
        batch = max(1, int(round(tr["batch_fraction"] * n_rows)))
    return FitConfig(epochs=int(epochs if epochs is not None else tr["epochs"]), stride=int(tr["stride"]),
                     lr=float(tr["lr"]), seed=seed, criterion=criterion or tr["criterion"],
                     batch_size=batch, lr_final=tr.get("lr_final"))


def _tabular(ds: GridDataset) -> bool:
    return ds.grid == (1, 1)


def _xy(ds: GridDataset):
    """Model inputs: tabular datasets become 1-D row sets so minibatching applies."""
    if _tabular(ds):
        return ds.x[:, 0, 0, :], ds.y[:, 0, 0]
    return ds.x, ds.y


def _cells(ds: GridDataset, grid_mask) -> np.ndarray:
    return grid_mask[:, 0, 0] if _tabular(ds) else grid_mask


def fold_labels(ds: GridDataset, cfg: RunConfig) -> np.ndarray:
    """Fold label per cell (grid-shaped), 0 where unobserved."""
    f = cfg["folds"]
    T, D1, D2 = ds.y.shape
    plan = make_cv_folds(ds.lat.ravel(), ds.lon.ravel(), ds.times, ds.observed.reshape(T, D1 * D2),
                         K=int(f["K"]), seed=int(f["seed"]), block=int(f["block"]))
    return plan.labels.reshape(T, D1, D2)


def _threshold_target(ds: GridDataset, cfg: RunConfig) -> np.ndarray:
    pos = ds.observed & (np.nan_to_num(ds.y) > 0) if cfg["threshold"]["positive_only"] else ds.observed
    return pos


def fit_threshold(ds: GridDataset, cfg: RunConfig, train: np.ndarray, seed: int, warm=None) -> Fitted:
    """Quantile-regression network for u(s, t) at level p_u (tilted loss)."""
    th = cfg["threshold"]
    x, y = _xy(ds)
    target = _cells(ds, train & _threshold_target(ds, cfg))
    spec = single_surface_spec("u", "identity", ds.d, layers_from(th["layers"]), ds.names)
    model = PinnModel(spec).prepare(x, target)
    start = {"u": float(np.quantile(y[target], th["p_u"]))}
    params = model.init_params(np.random.default_rng([seed, 1]), start)
    if warm is not None:
        params = warm_start(Checkpoint(warm.params, 0, 0.0, ""), params)
    obj = Objective(model, x, y, LossSpec("tilted", tau=float(th["p_u"])), observed=target)
    fc = _fit_config(cfg, seed, th.get("epochs"), "training-loss", n_rows=y.size if _tabular(ds) else None)
    rep = fit(obj, params, fc, n_rows=y.size)
    return Fitted(model, rep.params, rep.to_dict())


def fit_occurrence(ds: GridDataset, cfg: RunConfig, train: np.ndarray, seed: int) -> Fitted:
    """Logistic network for the probability of a positive response."""
    oc = cfg["occurrence"] or {}
    x, y = _xy(ds)
    obs = _cells(ds, train)
    z = np.where(obs, (np.nan_to_num(y) > 0).astype(np.float64), 0.0)
    layers = layers_from(oc.get("layers", cfg["threshold"]["layers"]))
    spec = single_surface_spec("p0", "logistic", ds.d, layers, ds.names)
    model = PinnModel(spec).prepare(x, obs)
    rate = float(np.clip(z[obs].mean(), 1e-3, 1 - 1e-3))
    params = model.init_params(np.random.default_rng([seed, 2]), {"p0": rate})
    obj = Objective(model, x, z, LossSpec("bernoulli"), observed=obs)
    fc = _fit_config(cfg, seed, oc.get("epochs"), "training-loss", n_rows=y.size if _tabular(ds) else None)
    rep = fit(obj, params, fc, n_rows=y.size)
    return Fitted(model, rep.params, rep.to_dict())


def fit_pp(ds: GridDataset, cfg: RunConfig, u, train: np.ndarray, valid: np.ndarray | None, seed: int,
           warm=None) -> Fitted:
    """bGEV point-process model on positive training cells with a frozen threshold grid."""
    pp = cfg["pp"]
    x, y = _xy(ds)
    u = np.asarray(u, dtype=np.float64)
    pos = ds.observed & (np.nan_to_num(ds.y) > 0)
    tr = _cells(ds, train & pos)
    spec = model_spec_from(cfg["model"], ds.names)
    model = PinnModel(spec).prepare(x, tr)
    loss = LossSpec("bgev_pp", variant=pp["variant"], n_y=int(pp["n_y"]))
    rng = np.random.default_rng([seed, 7])
    if warm is not None:
        params = warm_start(Checkpoint(warm.params, 0, 0.0, ""), model.init_params(rng))
    elif pp["init"] == "aligned" and _tabular(ds):
        params = aligned_start(model, x, y, u, rng, tr, int(pp["n_y"]))
    else:
        from .train import constant_pp_fit

        params = model.init_params(rng, constant_pp_fit(y, u, tr, int(pp["n_y"]), epochs=300))
    obj = Objective(model, x, y, loss, observed=tr, u=u)
    validation, criterion = None, "training-loss"
    if valid is not None and np.any(valid & pos):
        validation = Objective(model, x, y, loss, observed=_cells(ds, valid & pos), u=u)
        criterion = cfg["training"]["criterion"]
    fc = _fit_config(cfg, seed, criterion=criterion, n_rows=y.size if _tabular(ds) else None)
    rep = fit(obj, params, fc, validation=validation, n_rows=y.size)
    out = rep.to_dict()
    out["n_params"] = count_params(spec)
    return Fitted(model, rep.params, out)


# ---------------------------------------------------------------------------
# prediction and scoring


def predictive_quantile(p, q, s, xi, n_y: int = 1, p0=None) -> np.ndarray:
    """Quantile of G_b^(1/n_y), optionally mixed with a point mass at zero."""
    q, s = np.broadcast_arrays(np.asarray(q, float), np.asarray(s, float))
    target = np.full(q.shape, float(p))
    zero = np.zeros(q.shape, dtype=bool)
    if p0 is not None:
        p0 = np.broadcast_to(np.asarray(p0, float), q.shape)
        target = (p - (1.0 - p0)) / np.maximum(p0, 1e-300)
        zero = target <= 0
        target = np.clip(target, 1e-12, 1 - 1e-12)
    out = bgev_quantile(target ** n_y, QuantileParams(q, s, float(xi)))
    return np.where(zero, 0.0, out)


def predict(ds: GridDataset, cfg: RunConfig, pp: Fitted, thr: Fitted | None = None,
            occ: Fitted | None = None) -> dict[str, np.ndarray]:
    """Per-cell parameter grids and response-scale quantiles (negatives clamped to 0)."""
    x, _ = _xy(ds)
    theta = eval_theta(pp.model, pp.params, x)
    n_y = int(cfg["pp"]["n_y"])
    shape = ds.y.shape
    out = {"q": theta["q"].reshape(shape), "s": theta["s"].reshape(shape),
           "xi": np.full(shape, float(theta["xi"]))}
    if thr is not None:
        out["u"] = eval_theta(thr.model, thr.params, x)["u"].reshape(shape)
    p0 = None
    if occ is not None:
        p0 = eval_theta(occ.model, occ.params, x)["p0"].reshape(shape)
        out["p0"] = p0
    for level in cfg["metrics"]["quantile_levels"]:
        qv = predictive_quantile(float(level), out["q"], out["s"], float(theta["xi"]), n_y, p0)
        out[f"quantile_{level}"] = ds.response_scale(qv)
    return out


def prediction_table(ds: GridDataset, pred: dict) -> dict:
    T, D1, D2 = ds.y.shape
    t, r, c = np.meshgrid(np.arange(T), np.arange(D1), np.arange(D2), indexing="ij")
    table = {"t_index": t.ravel(), "row": r.ravel(), "col": c.ravel()}
    table.update({k: np.asarray(v, dtype=np.float64).ravel() for k, v in pred.items()})
    return table


def score_panel(ds: GridDataset, cfg: RunConfig, pred: dict, train: np.ndarray, valid: np.ndarray | None,
                fitted: Fitted) -> ScorePanel:
    """Losses, AIC, sMAD in/out of sample and twCRPS for a fitted PP model."""
    n_y = int(cfg["pp"]["n_y"])
    pos = ds.observed & (np.nan_to_num(ds.y) > 0)
    y = np.nan_to_num(ds.y)
    xi = float(pred["xi"].flat[0])
    p1 = float(cfg["metrics"]["p1"])
    thresholds = cfg["metrics"]["thresholds"]
    thresholds = twcrps_thresholds() if thresholds is None else np.asarray(thresholds, float)

    def smad_of(mask):
        m = mask & pos
        if m.sum() * (1 - p1) < 2:
            return None
        f = pp_predictive_cdf(y[m], pred["q"][m], pred["s"][m], xi, n_y)
        return smad(pit_exponential(f), p1)

    n_params = int(fitted.report.get("n_params", count_params(fitted.model.spec)))
    train_loss = float(fitted.report["train_losses"][-1]) if fitted.report.get("train_losses") else None
    x, yy = _xy(ds)
    u = pred.get("u")
    loss = LossSpec("bgev_pp", variant=cfg["pp"]["variant"], n_y=n_y)
    if u is not None:
        uu = u[:, 0, 0] if _tabular(ds) else u
        train_loss = Objective(fitted.model, x, yy, loss, observed=_cells(ds, train & pos), u=uu).value(
            fitted.params)
    panel = ScorePanel(training_loss=train_loss, n_params=n_params)
    panel.aic = aic(train_loss, n_params) if train_loss is not None else None
    panel.smad_in = smad_of(train)
    if valid is not None and np.any(valid & pos):
        if u is not None:
            panel.validation_loss = Objective(fitted.model, x, yy, loss, observed=_cells(ds, valid & pos),
                                              u=uu).value(fitted.params)
        panel.smad_out = smad_of(valid)
        m = valid & ds.observed
        p0 = pred.get("p0")
        if p0 is None:
            m = m & pos
        cdf = pp_cdf_table(thresholds, pred["q"], pred["s"], xi, n_y, p0)
        panel.twcrps = twcrps(np.where(m, y, np.nan), cdf, thresholds, m)
    return panel


# ---------------------------------------------------------------------------
# tasks


def _load(cfg: RunConfig) -> GridDataset:
    path = cfg.get("data")
    if not path:
        raise ValueError("this task needs a 'data' path in the config")
    ds = load_dataset(path)
    if cfg["transform"] == "sqrt":
        ds = ds.with_sqrt_response()
    return ds


def _split_masks(ds: GridDataset, cfg: RunConfig):
    labels = fold_labels(ds, cfg)
    k = int(cfg["folds"]["validation_fold"])
    valid = labels == k
    train = (labels > 0) & ~valid
    return train, valid, labels


def _base_fit(ds: GridDataset, cfg: RunConfig, seed: int, warm: dict | None = None):
    """Threshold (and optional occurrence) model, then the PP model; returns all parts."""
    train, valid, labels = _split_masks(ds, cfg)
    warm = warm or {}
    thr = fit_threshold(ds, cfg, train, seed, warm.get("threshold"))
    x, _ = _xy(ds)
    u_flat = eval_theta(thr.model, thr.params, x)["u"]
    occ = fit_occurrence(ds, cfg, train, seed) if cfg["occurrence"] is not None else None
    pp = fit_pp(ds, cfg, u_flat, train, valid, seed, warm.get("pp"))
    return {"threshold": thr, "occurrence": occ, "pp": pp, "train": train, "valid": valid, "labels": labels}


def task_simulate(cfg: RunConfig, out: str) -> dict:
    sc = cfg.get("simulate") or {}
    spec = ScenarioSpec(sc.get("study", "B1-case1"), int(sc.get("n", 10000)), seed=int(sc.get("seed", cfg.seed)),
                        coef_seed=int(sc.get("coef_seed", 0)))
    sim = simulate(spec)
    ds = GridDataset.from_table(sim.x, sim.y)
    path = os.path.join(out, "dataset.csv")
    save_dataset(ds, path)
    write_table(os.path.join(out, "truth.csv"), {"u": sim.u, **{k: np.asarray(v) for k, v in sim.truth.items()
                                                               if np.ndim(v) == 1 and np.size(v) == sim.y.size}})
    return {"task": "simulate", "manifest": sim.manifest, "dataset": "dataset.csv",
            "n": spec.n, "exceedance_rate": float(np.mean(sim.y > sim.u))}


def task_threshold(cfg: RunConfig, out: str) -> dict:
    ds = _load(cfg)
    train, valid, _ = _split_masks(ds, cfg)
    thr = fit_threshold(ds, cfg, train, cfg.seed)
    thr.save(out, "threshold")
    x, _ = _xy(ds)
    u = eval_theta(thr.model, thr.params, x)["u"].reshape(ds.y.shape)
    write_table(os.path.join(out, "predictions.csv"), prediction_table(ds, {"u": u}))
    target = _threshold_target(ds, cfg)
    rate = float(np.mean(ds.y[valid & target] > u[valid & target])) if np.any(valid & target) else None
    return {"task": "threshold", "fit": thr.report, "validation_exceedance_rate": rate}


def task_occurrence(cfg: RunConfig, out: str) -> dict:
    ds = _load(cfg)
    train, valid, _ = _split_masks(ds, cfg)
    occ = fit_occurrence(ds, cfg, train, cfg.seed)
    occ.save(out, "occurrence")
    x, _ = _xy(ds)
    p0 = eval_theta(occ.model, occ.params, x)["p0"].reshape(ds.y.shape)
    write_table(os.path.join(out, "predictions.csv"), prediction_table(ds, {"p0": p0}))
    return {"task": "occurrence", "fit": occ.report}


def task_bgev_pp(cfg: RunConfig, out: str) -> dict:
    ds = _load(cfg)
    parts = _base_fit(ds, cfg, cfg.seed)
    for stem in ("threshold", "occurrence", "pp"):
        if parts[stem] is not None:
            parts[stem].save(out, stem)
    pred = predict(ds, cfg, parts["pp"], parts["threshold"], parts["occurrence"])
    write_table(os.path.join(out, "predictions.csv"), prediction_table(ds, pred))
    panel = score_panel(ds, cfg, pred, parts["train"], parts["valid"], parts["pp"])
    pos = parts["valid"] & ds.observed & (np.nan_to_num(ds.y) > 0)
    if pos.sum() >= 2:
        f = pp_predictive_cdf(np.nan_to_num(ds.y)[pos], pred["q"][pos], pred["s"][pos],
                              float(pred["xi"].flat[0]), int(cfg["pp"]["n_y"]))
        e = pit_exponential(f)
        if e.size * (1 - float(cfg["metrics"]["p1"])) >= 2:
            write_table(os.path.join(out, "qq.csv"), qq_table(e, float(cfg["metrics"]["p1"])))
    pp = parts["pp"]
    coef = {n: pp.model.linear_coefficients(pp.params, n) for n in ("q", "s")
            if pp.model.spec.surface(n).partition.linear}
    return {"task": "bgev_pp", "scores": panel.to_dict(), "xi": float(pred["xi"].flat[0]),
            "linear_coefficients": coef, "fit": {k: parts[k].report for k in ("threshold", "pp")}}


def task_predict(cfg: RunConfig, out: str) -> dict:
    ds = _load(cfg)
    src = (cfg.get("predict") or {}).get("run")
    if not src:
        raise ValueError("predict needs predict.run pointing at a fitted run directory")
    pp = Fitted.load(src, "pp")
    thr = Fitted.load(src, "threshold") if os.path.exists(os.path.join(src, "threshold.ckpt")) else None
    occ = Fitted.load(src, "occurrence") if os.path.exists(os.path.join(src, "occurrence.ckpt")) else None
    pred = predict(ds, cfg, pp, thr, occ)
    write_table(os.path.join(out, "predictions.csv"), prediction_table(ds, pred))
    return {"task": "predict", "source": src, "cells": int(ds.y.size)}


def task_score(cfg: RunConfig, out: str) -> dict:
    """Score a prediction table against a dataset.

    The table either carries the forecast cdf at each twCRPS threshold
    (columns ``cdf_1 .. cdf_m``) or PP parameters ``q, s, xi`` (and ``p0``).
    """
    ds = _load(cfg)
    sc = cfg.get("score") or {}
    table = read_table(sc["predictions"])
    thresholds = cfg["metrics"]["thresholds"]
    thresholds = twcrps_thresholds() if thresholds is None else np.asarray(thresholds, float)
    shape = ds.y.shape
    y = ds.y
    n_y = int(cfg["pp"]["n_y"])
    cdf_cols = [f"cdf_{j + 1}" for j in range(thresholds.size)]
    result = {"task": "score"}
    if all(c in table for c in cdf_cols):
        cdf = np.stack([table[c].reshape(shape) for c in cdf_cols], axis=-1)
        result["twcrps"] = twcrps(y, cdf, thresholds, ds.observed)
        return result
    q, s = table["q"].reshape(shape), table["s"].reshape(shape)
    xi = float(table["xi"][0])
    p0 = table["p0"].reshape(shape) if "p0" in table else None
    obs = ds.observed if p0 is not None else ds.observed & (np.nan_to_num(y) > 0)
    result["twcrps"] = twcrps(np.where(obs, y, np.nan), pp_cdf_table(thresholds, q, s, xi, n_y, p0),
                              thresholds, obs)
    pos = ds.observed & (np.nan_to_num(y) > 0)
    e = pit_exponential(pp_predictive_cdf(y[pos], q[pos], s[pos], xi, n_y))
    p1 = float(cfg["metrics"]["p1"])
    result["smad"] = smad(e, p1) if e.size * (1 - p1) >= 2 else None
    return result


def task_bootstrap(cfg: RunConfig, out: str) -> dict:
    """Stationary-bootstrap refits warm-started from the full-data fit.

    Each replicate refits on resampled time steps with the same validation
    fold as the base fit (single-fold rule); envelopes are written for the
    linear coefficients, spline curves centred at the predictor median and
    quantile maps over the original grid.
    """
    ds = _load(cfg)
    bc = cfg["bootstrap"]
    base = _base_fit(ds, cfg, cfg.seed)
    labels = base["labels"]
    plan = BootstrapPlan(int(bc["replicates"]), float(bc["mean_block"]), int(bc["seed"]))
    k = int(cfg["folds"]["validation_fold"])
    level = float(cfg["metrics"]["quantile_levels"][0])
    pp0 = base["pp"]
    spec = pp0.model.spec
    x_all, _ = _xy(ds)
    rows = x_all.reshape(-1, ds.d)[base["train"].reshape(-1)]
    curve_x = {}
    for name in ("q", "s"):
        for j in spec.surface(name).partition.additive:
            lo, hi = np.quantile(rows[:, j], [0.01, 0.99])
            curve_x[(name, j)] = (np.linspace(lo, hi, int(bc["curve_points"])), float(np.median(rows[:, j])))

    def summaries(fitted: Fitted, thr: Fitted):
        coefs = {f"{n}:{p}": v for n in ("q", "s") if spec.surface(n).partition.linear
                 for p, v in fitted.model.linear_coefficients(fitted.params, n).items()}
        curves = {}
        for (n, j), (grid, med) in curve_x.items():
            c = fitted.model.additive_curve(fitted.params, n, j, grid)
            curves[(n, j)] = c - fitted.model.additive_curve(fitted.params, n, j, np.array([med]))[0]
        pred = predict(ds, cfg.with_overrides(metrics={"quantile_levels": [level]}), fitted, thr,
                       base["occurrence"])
        return coefs, curves, pred[f"quantile_{level}"]

    samples, failures = [], []
    for b, idx in enumerate(stationary_bootstrap(ds.T, plan)):
        sub = ds.take_times(idx)
        sub_labels = labels[idx]
        sub_cfg = cfg
        try:
            valid = sub_labels == k
            train = (sub_labels > 0) & ~valid
            thr = fit_threshold(sub, sub_cfg, train, cfg.seed + b + 1, base["threshold"])
            x, _ = _xy(sub)
            u = eval_theta(thr.model, thr.params, x)["u"]
            fitted = fit_pp(sub, sub_cfg, u, train, valid, cfg.seed + b + 1, pp0)
            samples.append(summaries(fitted, thr))
        except Exception as exc:  # isolate replicate failures
            failures.append({"replicate": b, "error": f"{type(exc).__name__}: {exc}"})
            log.warning("bootstrap replicate %d failed: %s", b, exc)
    probs = [float(p) for p in bc["probs"]]
    result = {"task": "bootstrap", "replicates": plan.replicates, "failures": failures,
              "completed": len(samples)}
    if not samples:
        return result
    coef_names = sorted(samples[0][0])
    env = envelope(np.array([[s[0][c] for c in coef_names] for s in samples]), probs)
    result["coefficients"] = {c: {str(p): float(env[p][i]) for p in probs} for i, c in enumerate(coef_names)}
    if curve_x:
        cols = {"surface": [], "predictor": [], "x": []}
        for p in probs:
            cols[f"p{p}"] = []
        for key, (grid, _) in curve_x.items():
            env_c = envelope(np.array([s[1][key] for s in samples]), probs)
            cols["surface"] += [key[0]] * grid.size
            cols["predictor"] += [ds.names[key[1]]] * grid.size
            cols["x"] += list(grid)
            for p in probs:
                cols[f"p{p}"] += list(env_c[p])
        write_table(os.path.join(out, "curves.csv"), cols)
    maps = envelope(np.array([s[2] for s in samples]), probs)
    write_table(os.path.join(out, "quantile_maps.csv"),
                prediction_table(ds, {f"p{p}": np.maximum(maps[p], 0.0) for p in probs}))
    return result


def _sweep_point(args):
    """One sweep sub-run in a worker process; failures come back as data."""
    raw, label = args
    try:
        cfg = RunConfig.from_dict(raw)
        ds = _load(cfg)
        parts = _base_fit(ds, cfg, cfg.seed)
        pred = predict(ds, cfg, parts["pp"], parts["threshold"], parts["occurrence"])
        panel = score_panel(ds, cfg, pred, parts["train"], parts["valid"], parts["pp"])
        return {"label": label, **panel.to_dict(), "error": None}
    except Exception as exc:
        log.debug("sweep point %s failed:\n%s", label, traceback.format_exc())
        return {"label": label, "error": f"{type(exc).__name__}: {exc}"}


def _sweep_override(cfg: RunConfig, over: str, value) -> dict:
    if over == "form":
        return _merge(cfg.raw, {"model": {"form": value}})
    if over == "p_u":
        return _merge(cfg.raw, {"threshold": {"p_u": float(value)}})
    if over == "architecture":
        return _merge(cfg.raw, {"model": {"layers": value}})
    raise ValueError(f"cannot sweep over {over!r}; use form, p_u or architecture")


def sweep_labels(over: str, values) -> list[str]:
    if over == "architecture":
        return ["-".join(f"{layer['kind']}{layer['width']}" for layer in v) for v in values]
    return [str(v) for v in values]


def task_sweep(cfg: RunConfig, out: str, workers: int = 1) -> dict:
    sw = cfg["sweep"]
    over, values = sw["over"], list(sw["values"])
    labels = sweep_labels(over, values)
    jobs = []
    for value, label in zip(values, labels):
        raw = _sweep_override(cfg, over, value)
        raw["task"] = "bgev_pp"
        jobs.append((raw, label))
    # parameter counts do not need a fit; they are filled in even for failed points
    ds = _load(cfg)
    counts = [count_params(model_spec_from(RunConfig.from_dict(r)["model"], ds.names)) for r, _ in jobs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    for row, n in zip(rows, counts):
        row["n_params"] = n
    cols = ("label", "n_params", "training_loss", "validation_loss", "aic", "twcrps", "smad_in", "smad_out")
    table = {c: [r.get(c) if r.get(c) is not None else np.nan for r in rows] for c in cols}
    table["label"] = [r["label"] for r in rows]
    table["n_params"] = [int(r["n_params"]) for r in rows]
    write_table(os.path.join(out, "comparison.csv"), table)
    return {"task": "sweep", "over": over, "rows": rows,
            "failures": [r["label"] for r in rows if r.get("error")]}


def task_gradcheck(cfg: RunConfig, out: str) -> dict:
    """Finite-difference check of the PP objective through the configured model."""
    gc = cfg["gradcheck"]
    ds = _load(cfg)
    x, y = _xy(ds)
    rng = np.random.default_rng(cfg.seed)
    pos = _cells(ds, ds.observed & (np.nan_to_num(ds.y) > 0))
    idx = np.flatnonzero(pos.ravel())
    keep = np.zeros(pos.size, dtype=bool)
    keep[rng.choice(idx, size=min(int(gc["max_cells"]), idx.size), replace=False)] = True
    keep = keep.reshape(pos.shape)
    spec = model_spec_from(cfg["model"], ds.names)
    model = PinnModel(spec).prepare(x, pos)
    u = np.full(y.shape, float(np.quantile(y[pos], cfg["threshold"]["p_u"])))
    from .train import default_intercepts

    start = default_intercepts(y, pos)
    start["q"] = float(np.quantile(y[pos], 0.5))
    params = model.init_params(rng, start)
    for key in params:
        if key.endswith(".eta") or key.endswith(".omega"):
            params[key] = 0.05 * rng.standard_normal(params[key].shape)
    obj = Objective(model, x, y, LossSpec("bgev_pp", n_y=int(cfg["pp"]["n_y"])), observed=keep, u=u)
    rep = grad_check(obj, params, h=float(gc["h"]), tol=float(gc["tol"]))
    return {"task": "gradcheck", "passed": rep.passed, "n_checked": int(rep.rel_error.size),
            "n_excluded": int(rep.excluded.sum()), "n_failed": int(rep.failed.sum()),
            "max_rel_error": float(np.max(np.where(rep.excluded, 0.0, rep.rel_error))) if rep.rel_error.size
            else 0.0}


TASK_FUNCS = {"simulate": task_simulate, "threshold": task_threshold, "occurrence": task_occurrence,
              "bgev_pp": task_bgev_pp, "predict": task_predict, "score": task_score,
              "bootstrap": task_bootstrap, "sweep": task_sweep, "gradcheck": task_gradcheck}


def run(cfg: RunConfig, out: str, workers: int = 1) -> dict:
    """Execute one task; writes report.json and manifest.json into ``out``."""
    os.makedirs(out, exist_ok=True)
    fn = TASK_FUNCS[cfg.task]
    report = fn(cfg, out, workers) if cfg.task == "sweep" else fn(cfg, out)
    write_json(os.path.join(out, "report.json"), report)
    inputs = {}
    for key in ("data",):
        path = cfg.get(key)
        if path and os.path.exists(path):
            inputs[os.path.basename(path)] = sha256_file(path)
            if os.path.exists(path + ".json"):
                inputs[os.path.basename(path) + ".json"] = sha256_file(path + ".json")
    outputs = {name: sha256_file(os.path.join(out, name)) for name in sorted(os.listdir(out))
               if name != "manifest.json" and not name.startswith(".")
               and os.path.isfile(os.path.join(out, name))}
    manifest = {"package": "pinnex", "version": __version__, "task": cfg.task, "seed": cfg.seed,
                "config": cfg.to_dict(), "inputs": inputs, "outputs": outputs}
    write_json(os.path.join(out, "manifest.json"), manifest)
    return report
