"""Desk-scale versions of the simulation studies: recovery, tail misspecification, form choice."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from .autodiff import value_of
from .evt import BGevConfig
from .forms import bgev_model_spec, mlp
from .metrics import equal_probability_grid, mise_centered, pp_log_survival, stls_from_log_survival, stls_grid
from .newton import PpNewton
from .objectives import LossSpec, Objective
from .pinn.network import network_forward
from .pinn.surface import ModelSpec, PinnModel, PredictorPartition, SurfaceSpec, eval_theta
from .simgen import ScenarioSpec, b1_truth, simulate
from .train import FitConfig, aligned_start, fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    """Training budget for one study fit."""

    epochs: int = 200
    lr: float = 0.003
    lr_final: float | None = 0.0003
    stride: int = 50
    batch_fraction: float | None = None
    batch_rows: int | None = 10000
    const_epochs: int = 300
    eval_rows: int = 20000
    seed: int = 0
    newton_iters: int = 100
    backfit: bool = False


# budgets used by the desk-scale studies
B1_CONFIG = StudyConfig(epochs=200, backfit=True)
B2_CONFIG = StudyConfig(epochs=100)
B3_CONFIG = StudyConfig(epochs=100)


def _split(n: int, fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    cut = int(round(fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def interpretable_part(spec: ModelSpec) -> ModelSpec:
    """The same model with every network component removed."""
    surfaces = []
    for sf in spec.surfaces:
        part = PredictorPartition(sf.partition.linear, sf.partition.additive, ())
        surfaces.append(replace(sf, partition=part, layers=()))
    return replace(spec, surfaces=tuple(surfaces))


def start_params(spec: ModelSpec, x, y, u, cfg: StudyConfig, seed: int = 0):
    """Prepared model and starting parameters.

    With ``cfg.newton_iters`` the network-free sub-model is fitted by Newton
    steps first and the full model starts from it with zero network output.
    """
    model = PinnModel(spec).prepare(x)
    rng = np.random.default_rng([seed, 7])
    if not cfg.newton_iters:
        return model, aligned_start(model, x, y, u, rng, epochs=cfg.const_epochs)
    sub = PinnModel(interpretable_part(spec)).prepare(x)
    p0 = aligned_start(sub, x, y, u, rng, epochs=cfg.const_epochs)
    p0, info = PpNewton(sub, x, y, u).fit(p0, max_iter=cfg.newton_iters)
    log.debug("interpretable pre-fit: %s", info)
    params = model.init_params(rng)
    params.update(p0)
    for sf in spec.surfaces:
        if sf.partition.network:
            params[f"{sf.name}.net.out"] = np.zeros_like(params[f"{sf.name}.net.out"])
    return model, params


def fit_pp(spec: ModelSpec, x, y, u, cfg: StudyConfig, seed: int = 0, val=None):
    """Fit a bGEV point-process model; ``val`` = (x, y, u) switches to best-by-validation."""
    model, params = start_params(spec, x, y, u, cfg, seed)
    objective = Objective(model, x, y, LossSpec("bgev_pp"), u=u)
    validation = None
    stride, criterion = cfg.stride, "training-loss"
    if val is not None:
        validation = Objective(model, val[0], val[1], LossSpec("bgev_pp"), u=val[2])
        stride, criterion = 1, "validation-loss"
    batch = None
    if cfg.batch_rows and cfg.batch_rows < len(y):
        batch = int(cfg.batch_rows)
    elif cfg.batch_fraction:
        batch = max(1, int(round(cfg.batch_fraction * len(y))))
    fc = FitConfig(epochs=cfg.epochs, stride=stride, lr=cfg.lr, seed=seed, criterion=criterion,
                   batch_size=batch, lr_final=cfg.lr_final)
    report = fit(objective, params, fc, validation=validation, n_rows=len(y))
    if cfg.backfit and cfg.newton_iters and val is None:
        report.best.params = backfit_interpretable(model, report.params, x, y, u, cfg)
    return model, report


def network_offsets(model: PinnModel, params: dict, x) -> dict:
    """m_N of every surface with a network part, as fixed arrays."""
    feats = model.features(x)
    out = {}
    for sf in model.spec.surfaces:
        if sf.partition.network:
            sub = {k[len(sf.name) + 5:]: v for k, v in params.items() if k.startswith(f"{sf.name}.net.")}
            out[sf.name] = np.asarray(value_of(network_forward(feats[sf.name]["net"], sub, sf.layers)))
    return out


def backfit_interpretable(model: PinnModel, params: dict, x, y, u, cfg: StudyConfig) -> dict:
    """Newton refit of intercepts, linear and spline weights with the networks held fixed."""
    sub = PinnModel(interpretable_part(model.spec)).prepare(x)
    start = {k: params[k] for k in sub.spec.param_shapes()}
    refit, info = PpNewton(sub, x, y, u, offsets=network_offsets(model, params, x)).fit(
        start, max_iter=cfg.newton_iters)
    log.debug("backfit: %s", info)
    out = dict(params)
    out.update(refit)
    return out


def stls_of_fit(model: PinnModel, params: dict, x, true_quantile, p_minus: float = 0.99) -> float:
    """Tail log-survival score of a fitted model against true conditional quantiles."""
    grid = stls_grid(p_minus)
    theta = eval_theta(model, params, x)
    v = true_quantile(grid)
    ls = pp_log_survival(v, theta["q"][:, None], theta["s"][:, None], float(theta["xi"]))
    return stls_from_log_survival(ls, grid, p_minus)


# ---------------------------------------------------------------------------
# recovery of linear and additive effects


def b1_model_spec() -> ModelSpec:
    part = PredictorPartition(linear=(6, 7), additive=(8, 9), network=tuple(range(6)))
    layers = mlp((8, 6, 4, 2))
    return ModelSpec(10, (SurfaceSpec("q", "identity", part, 20, 0.0, layers),
                          SurfaceSpec("s", "exp", part, 20, 0.0, layers),
                          SurfaceSpec("xi", "logistic")))


def b1_replicate(case: int, n: int, seed: int, cfg: StudyConfig, grid=None) -> dict:
    """Fit one replicate set; return squared coefficient errors and centred ISEs."""
    sim = simulate(ScenarioSpec(f"B1-case{case}", n, seed=seed))
    model, report = fit_pp(b1_model_spec(), sim.x, sim.y, sim.u, cfg, seed)
    params = report.params
    truth = b1_truth(case)
    grid = equal_probability_grid(5000) if grid is None else grid
    out = {"n": n, "seed": seed, "best_epoch": report.best.epoch}
    for name in ("q", "s"):
        est = model.linear_coefficients(params, name)
        for k, key in enumerate(("x_7", "x_8")):
            out[f"eta_{name}{k + 1}"] = est[key]
            out[f"se_{name}{k + 1}"] = (est[key] - truth.eta[name][k]) ** 2
        for k, col in enumerate((8, 9)):
            curve = lambda v, c=col, nm=name: model.additive_curve(params, nm, c, v)  # noqa: E731
            out[f"ise_{name}{k + 1}"] = mise_centered(truth.additive[name][k], curve, grid)
    return out


B1_SLOTS = ("se_q1", "se_q2", "se_s1", "se_s2", "ise_q1", "ise_q2", "ise_s1", "ise_s2")


def b1_study(case: int, n: int, reps: int, cfg: StudyConfig, seed0: int = 0) -> dict:
    rows = [b1_replicate(case, n, seed0 + r, cfg) for r in range(reps)]
    summary = {slot: float(np.mean([r[slot] for r in rows])) for slot in B1_SLOTS}
    for key in ("eta_q1", "eta_q2", "eta_s1", "eta_s2"):
        summary[f"mean_{key}"] = float(np.mean([r[key] for r in rows]))
    summary["rows"] = rows
    return summary


# ---------------------------------------------------------------------------
# misspecified response laws


def b2_model_spec(d: int = 10) -> ModelSpec:
    return bgev_model_spec("fully-NN", d, mlp((8, 6, 4, 2)))


def b2_replicate(study: str, n: int, seed: int, cfg: StudyConfig) -> float:
    sim = simulate(ScenarioSpec(study, n, seed=seed))
    model, report = fit_pp(b2_model_spec(sim.x.shape[1]), sim.x, sim.y, sim.u, cfg, seed)
    rows = np.random.default_rng([seed, 11]).choice(n, size=min(cfg.eval_rows, n), replace=False)
    quant = lambda p: sim.true_quantile(p)[rows]  # noqa: E731
    return stls_of_fit(model, report.params, sim.x[rows], quant)


# ---------------------------------------------------------------------------
# choice of functional form


B3_FORMS = ("fully-linear", "fully-GAM", "lin+GAM+NN", "fully-NN")


def b3_model_spec(form: str) -> ModelSpec:
    split = ((0, 1), (2, 3))
    return bgev_model_spec(form, 12, mlp((12, 8, 4, 2)), n_knots=10, q_split=split, s_split=split)


def b3_replicate(truth: str, forms, n: int, seed: int, cfg: StudyConfig, coef_seed: int = 0) -> dict:
    """Validation stLS of each form on one replicate set (80/20 split)."""
    sim = simulate(ScenarioSpec(f"B3-{truth}", n, seed=seed, coef_seed=coef_seed))
    rng = np.random.default_rng([seed, 13])
    val_idx, train_idx = _split(n, 0.2, rng)
    out = {}
    for form in forms:
        model, report = fit_pp(b3_model_spec(form), sim.x[train_idx], sim.y[train_idx],
                               sim.u[train_idx], cfg, seed,
                               val=(sim.x[val_idx], sim.y[val_idx], sim.u[val_idx]))
        rows = val_idx if val_idx.size <= cfg.eval_rows else np.sort(
            rng.choice(val_idx, cfg.eval_rows, replace=False))
        quant = lambda p, r=rows: sim.true_quantile(p)[r]  # noqa: E731
        out[form] = stls_of_fit(model, report.params, sim.x[rows], quant)
        log.info("B3 %s %s seed %d: stLS %.4g (best epoch %d)", truth, form, seed, out[form],
                 report.best.epoch)
    return out
