"""Partially-interpretable parameter surfaces.

Each distribution parameter is modelled as

    theta(s, t) = h(eta0 + x_L . eta + sum_j sum_k omega_jk psi_k(x_Aj) + net(x_N))

with a link h.  A :class:`PinnModel` owns one surface per parameter, the
standardisation statistics and knots fitted on training cells, and evaluates
all surfaces from a flat parameter dict so the optimiser can update them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import value_of
from .network import LayerSpec, init_network, network_forward, network_shapes, recurrent_valid_times
from .prep import StandardizationStats, fit_standardization, place_knots
from .spline import penalty_matrix, penalty_value, spline_eval, tps_basis

LINKS = ("identity", "exp", "logistic")


def apply_link(z, link: str):
    if link == "identity":
        return z
    if link == "exp":
        return ad.exp(ad.clip(z, -700.0, 700.0))
    if link == "logistic":
        return ad.sigmoid(z)
    raise ValueError(f"unknown link {link!r}")


def inverse_link(theta: float, link: str) -> float:
    if link == "identity":
        return float(theta)
    if link == "exp":
        if theta <= 0:
            raise ValueError("exponential link needs a positive value")
        return float(np.log(theta))
    if link == "logistic":
        if not 0 < theta < 1:
            raise ValueError("logistic link needs a value in (0, 1)")
        return float(np.log(theta / (1 - theta)))
    raise ValueError(f"unknown link {link!r}")


@dataclass(frozen=True)
class PredictorPartition:
    """Disjoint 0-based column index sets for the linear, additive and network parts."""

    linear: tuple[int, ...] = ()
    additive: tuple[int, ...] = ()
    network: tuple[int, ...] = ()

    def __post_init__(self):
        for key in ("linear", "additive", "network"):
            object.__setattr__(self, key, tuple(int(i) for i in getattr(self, key)))

    def validate(self, d: int) -> None:
        sets = [set(self.linear), set(self.additive), set(self.network)]
        if sum(len(s) for s in sets) != len(set().union(*sets)):
            raise ValueError("linear, additive and network predictor sets must be disjoint")
        for s in sets:
            if any(i < 0 or i >= d for i in s):
                raise ValueError(f"predictor index out of range for d={d}")
        for key in ("linear", "additive", "network"):
            idx = getattr(self, key)
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate index in the {key} set")


@dataclass(frozen=True)
class SurfaceSpec:
    name: str
    link: str = "identity"
    partition: PredictorPartition = field(default_factory=PredictorPartition)
    n_knots: int = 20
    smoothing: float = 0.0
    layers: tuple[LayerSpec, ...] = ()

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.partition.network and not self.layers:
            raise ValueError(f"surface {self.name!r} has network predictors but no layers")
        if self.smoothing < 0:
            raise ValueError("smoothing parameter must be non-negative")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def is_constant(self) -> bool:
        p = self.partition
        return not (p.linear or p.additive or p.network)

    def param_shapes(self) -> dict[str, tuple]:
        p = self.partition
        shapes = {f"{self.name}.eta0": ()}
        if p.linear:
            shapes[f"{self.name}.eta"] = (len(p.linear),)
        if p.additive:
            shapes[f"{self.name}.omega"] = (len(p.additive) * self.n_knots,)
        if p.network:
            for key, shp in network_shapes(self.layers, len(p.network)).items():
                shapes[f"{self.name}.net.{key}"] = shp
        return shapes

    def to_dict(self) -> dict:
        p = self.partition
        return {"name": self.name, "link": self.link,
                "linear": list(p.linear), "additive": list(p.additive), "network": list(p.network),
                "n_knots": self.n_knots, "smoothing": self.smoothing,
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceSpec":
        part = PredictorPartition(d.get("linear", ()), d.get("additive", ()), d.get("network", ()))
        return cls(d["name"], d.get("link", "identity"), part, int(d.get("n_knots", 20)),
                   float(d.get("smoothing", 0.0)),
                   tuple(LayerSpec.from_dict(x) for x in d.get("layers", ())))


@dataclass(frozen=True)
class ModelSpec:
    d: int
    surfaces: tuple[SurfaceSpec, ...]
    predictor_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        names = [s.name for s in self.surfaces]
        if len(set(names)) != len(names):
            raise ValueError("surface names must be unique")
        for s in self.surfaces:
            s.partition.validate(self.d)
        if self.predictor_names and len(self.predictor_names) != self.d:
            raise ValueError("predictor_names must have d entries")

    def surface(self, name: str) -> SurfaceSpec:
        for s in self.surfaces:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return self.predictor_names or tuple(f"x_{j + 1}" for j in range(self.d))

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for s in self.surfaces:
            shapes.update(s.param_shapes())
        return shapes

    def to_dict(self) -> dict:
        return {"d": self.d, "predictor_names": list(self.predictor_names),
                "surfaces": [s.to_dict() for s in self.surfaces]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(int(d["d"]), tuple(SurfaceSpec.from_dict(s) for s in d["surfaces"]),
                   tuple(d.get("predictor_names", ())))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def count_params(spec: ModelSpec) -> int:
    """Number of trainable scalars, including intercepts and the shared shape."""
    return int(sum(int(np.prod(shp)) for shp in spec.param_shapes().values()))


@dataclass
class SurfaceState:
    """Training-data quantities a surface needs at prediction time."""

    knots: list[np.ndarray]
    basis_stats: StandardizationStats | None
    penalty: list[np.ndarray]


class PinnModel:
    """All parameter surfaces of one model plus their frozen preprocessing."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.x_stats: StandardizationStats | None = None
        self.states: dict[str, SurfaceState] = {}

    # -- preprocessing -----------------------------------------------------

    def prepare(self, X, mask=None) -> "PinnModel":
        """Fit standardisation statistics and knots on training cells.

        ``X`` has shape grid + (d,); ``mask`` (grid-shaped, True = training
        cell) restricts the cells that inform the statistics.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.spec.d:
            raise ValueError(f"expected {self.spec.d} predictors, got {X.shape[-1]}")
        rows = X.reshape(-1, self.spec.d)
        if mask is not None:
            rows = rows[np.asarray(mask, dtype=bool).ravel()]
        self.x_stats = fit_standardization(rows, self.spec.names)
        self.states = {}
        for s in self.spec.surfaces:
            knots = [place_knots(rows[:, j], s.n_knots) for j in s.partition.additive]
            basis_stats = None
            if knots:
                basis = self._raw_basis(rows, s, knots)
                basis_stats = fit_standardization(
                    basis, [f"{self.spec.names[j]}@k{k}" for j in s.partition.additive
                            for k in range(s.n_knots)])
            self.states[s.name] = SurfaceState(knots, basis_stats, [penalty_matrix(k) for k in knots])
        return self

    @staticmethod
    def _raw_basis(rows: np.ndarray, s: SurfaceSpec, knots) -> np.ndarray:
        return np.concatenate([tps_basis(rows[:, j], kn) for j, kn in zip(s.partition.additive, knots)],
                              axis=1)

    def features(self, X) -> dict:
        """Standardised design pieces for every surface (numpy, no gradients)."""
        if self.x_stats is None:
            raise RuntimeError("call prepare() on training data first")
        X = np.asarray(X, dtype=np.float64)
        grid = X.shape[:-1]
        rows = X.reshape(-1, self.spec.d)
        z = self.x_stats.apply(rows)
        out = {"grid": grid, "valid": self.valid_mask(grid)}
        for s in self.spec.surfaces:
            p = s.partition
            f = {}
            if p.linear:
                f["lin"] = z[:, list(p.linear)]
            if p.additive:
                st = self.states[s.name]
                f["basis"] = st.basis_stats.apply(self._raw_basis(rows, s, st.knots))
            if p.network:
                f["net"] = z[:, list(p.network)].reshape(grid + (len(p.network),))
            out[s.name] = f
        return out

    def valid_mask(self, grid) -> np.ndarray:
        """Cells whose recurrent windows fit inside the time axis."""
        valid = np.ones(grid, dtype=bool)
        for s in self.spec.surfaces:
            if any(layer.kind == "recurrent" for layer in s.layers):
                times = recurrent_valid_times(grid[0], s.layers)
                valid &= times.reshape((-1,) + (1,) * (len(grid) - 1))
        return valid

    # -- parameters ----------------------------------------------------------

    def init_params(self, rng: np.random.Generator, intercepts: dict | None = None) -> dict:
        """Glorot network weights, zero linear/spline weights, link-inverted intercepts."""
        intercepts = intercepts or {}
        params = {}
        for s in self.spec.surfaces:
            for name, shp in s.param_shapes().items():
                params[name] = np.zeros(shp)
            params[f"{s.name}.eta0"] = np.array(inverse_link(intercepts[s.name], s.link)
                                                if s.name in intercepts else 0.0)
            if s.partition.network:
                net = init_network(s.layers, len(s.partition.network), rng)
                params.update({f"{s.name}.net.{k}": v for k, v in net.items()})
        return params

    # -- evaluation ------------------------------------------------------------

    def predictor(self, params: dict, feats: dict, name: str):
        """eta0 + m_L + m_A + m_N (before the link); scalar for constant surfaces.

        A fixed ``offset`` array in ``feats[name]`` is added when present.
        """
        s = self.spec.surface(name)
        f = feats[name]
        total = params[f"{name}.eta0"]
        if "offset" in f:
            total = ad.add(total, f["offset"])
        if s.is_constant:
            return total
        grid = feats["grid"]
        flat = 0.0
        if "lin" in f:
            flat = ad.add(flat, ad.matmul(f["lin"], params[f"{name}.eta"]))
        if "basis" in f:
            flat = ad.add(flat, spline_eval(f["basis"], params[f"{name}.omega"]))
        out = ad.add(total, ad.reshape(flat, grid)) if not isinstance(flat, float) else total
        if "net" in f:
            sub = {k[len(name) + 5:]: v for k, v in params.items() if k.startswith(f"{name}.net.")}
            out = ad.add(out, network_forward(f["net"], sub, s.layers))
        return out

    def theta(self, params: dict, feats: dict) -> dict:
        return {s.name: apply_link(self.predictor(params, feats, s.name), s.link)
                for s in self.spec.surfaces}

    def penalty(self, params: dict):
        total = 0.0
        for s in self.spec.surfaces:
            if not s.partition.additive or s.smoothing == 0:
                continue
            omega = params[f"{s.name}.omega"]
            k = s.n_knots
            for j, S in enumerate(self.states[s.name].penalty):
                block = ad.getitem(omega, slice(j * k, (j + 1) * k))
                total = ad.add(total, penalty_value(block, S, s.smoothing))
        return total

    # -- interpretation ----------------------------------------------------------

    def linear_coefficients(self, params: dict, name: str) -> dict[str, float]:
        """Linear effects per unit of the raw (unstandardised) predictor."""
        s = self.spec.surface(name)
        eta = value_of(params[f"{name}.eta"]) if s.partition.linear else np.zeros(0)
        sd = self.x_stats.sd[list(s.partition.linear)]
        return {self.spec.names[j]: float(e / v) for j, e, v in zip(s.partition.linear, eta, sd)}

    def additive_curve(self, params: dict, name: str, predictor: int, x) -> np.ndarray:
        """m_A contribution of one additive predictor evaluated at raw values x."""
        s = self.spec.surface(name)
        pos = s.partition.additive.index(predictor)
        st = self.states[name]
        k = s.n_knots
        sl = slice(pos * k, (pos + 1) * k)
        basis = tps_basis(np.asarray(x, dtype=np.float64), st.knots[pos])
        basis = (basis - st.basis_stats.mean[sl]) / st.basis_stats.sd[sl]
        return basis @ value_of(params[f"{name}.omega"])[sl]

    # -- persistence ---------------------------------------------------------------

    def state_dict(self) -> dict:
        return {"spec": self.spec.to_dict(),
                "x_stats": self.x_stats.to_dict() if self.x_stats else None,
                "surfaces": {n: {"knots": [k.tolist() for k in st.knots],
                                 "basis_stats": st.basis_stats.to_dict() if st.basis_stats else None}
                             for n, st in self.states.items()}}

    @classmethod
    def from_state_dict(cls, d: dict) -> "PinnModel":
        model = cls(ModelSpec.from_dict(d["spec"]))
        if d.get("x_stats"):
            model.x_stats = StandardizationStats.from_dict(d["x_stats"])
        for name, st in d.get("surfaces", {}).items():
            knots = [np.asarray(k, dtype=np.float64) for k in st["knots"]]
            bs = StandardizationStats.from_dict(st["basis_stats"]) if st["basis_stats"] else None
            model.states[name] = SurfaceState(knots, bs, [penalty_matrix(k) for k in knots])
        return model


def eval_theta(model: PinnModel, params: dict, X) -> dict[str, np.ndarray]:
    """Parameter grids theta_i(s, t) as plain arrays."""
    feats = model.features(X)
    return {k: np.asarray(value_of(v)) for k, v in model.theta(params, feats).items()}
