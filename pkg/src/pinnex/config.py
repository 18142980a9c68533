"""Declarative run configuration (JSON or YAML)."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import yaml

from .forms import FORMS, bgev_model_spec
from .pinn.network import LayerSpec
from .pinn.surface import ModelSpec

TASKS = ("occurrence", "threshold", "bgev_pp", "simulate", "score", "bootstrap", "sweep", "predict",
         "gradcheck")

DEFAULTS = {
    "seed": 0,
    "transform": "none",
    "model": {"form": "lin+GAM+NN", "n_knots": 20, "smoothing": 0.0,
              "layers": [{"kind": "dense", "width": 10}, {"kind": "dense", "width": 6},
                         {"kind": "dense", "width": 3}],
              "q_split": {"linear": [], "additive": []}, "s_split": {"linear": [], "additive": []}},
    "threshold": {"p_u": 0.8, "layers": [{"kind": "dense", "width": 6}, {"kind": "dense", "width": 3}],
                  "positive_only": True, "epochs": None},
    "occurrence": None,
    "pp": {"n_y": 1, "variant": "bgev", "init": "constant"},
    "training": {"epochs": 1000, "stride": 50, "lr": 0.01, "lr_final": None, "batch_fraction": None, "batch_rows": None,
                 "criterion": "training-loss"},
    "folds": {"K": 5, "seed": 0, "validation_fold": 1, "block": 9},
    "bootstrap": {"replicates": 10, "mean_block": 3.0, "seed": 0, "probs": [0.025, 0.5, 0.975],
                  "curve_points": 50},
    "metrics": {"p1": 0.95, "thresholds": None, "quantile_levels": [0.9]},
    "sweep": {"over": "form", "values": list(FORMS)},
    "gradcheck": {"max_cells": 40, "h": 1e-5, "tol": 1e-4},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    task: str
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")

    def __getitem__(self, key):
        return self.raw[key]

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if "task" not in d:
            raise ValueError("config needs a 'task' field")
        raw = _merge(DEFAULTS, d)
        return cls(raw["task"], raw)

    def with_overrides(self, **kw) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.raw, kw))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path} does not contain a mapping")
    return RunConfig.from_dict(data)


def _resolve(refs, names) -> tuple[int, ...]:
    out = []
    for ref in refs:
        if isinstance(ref, str):
            if ref not in names:
                raise ValueError(f"predictor {ref!r} is not in the dataset ({', '.join(names)})")
            out.append(names.index(ref))
        else:
            if not 0 <= int(ref) < len(names):
                raise ValueError(f"predictor index {ref} out of range")
            out.append(int(ref))
    return tuple(out)


def layers_from(spec_list) -> tuple[LayerSpec, ...]:
    return tuple(LayerSpec.from_dict(x) for x in spec_list)


def model_spec_from(cfg: dict, names) -> ModelSpec:
    """Build the (q, s, xi) model spec from the 'model' config section."""
    names = list(names)
    if "surfaces" in cfg:
        spec = ModelSpec.from_dict({"d": len(names), "surfaces": cfg["surfaces"],
                                    "predictor_names": names})
        return spec
    q = cfg.get("q_split", {})
    s = cfg.get("s_split", {})
    return bgev_model_spec(cfg["form"], len(names), layers_from(cfg["layers"]), int(cfg["n_knots"]),
                           float(cfg["smoothing"]),
                           (_resolve(q.get("linear", []), names), _resolve(q.get("additive", []), names)),
                           (_resolve(s.get("linear", []), names), _resolve(s.get("additive", []), names)),
                           tuple(names))
