"""Named model forms: which predictors enter each surface linearly, additively or via a network."""

from __future__ import annotations

from .pinn.network import LayerSpec
from .pinn.surface import ModelSpec, PredictorPartition, SurfaceSpec

FORMS = ("fully-linear", "fully-GAM", "fully-NN", "lin+GAM", "lin+NN", "GAM+NN", "lin+GAM+NN")


def mlp(widths, activation: str = "relu") -> tuple[LayerSpec, ...]:
    return tuple(LayerSpec("dense", int(w), activation) for w in widths)


def cnn(widths, filter=(3, 3), activation: str = "relu") -> tuple[LayerSpec, ...]:
    return tuple(LayerSpec("conv", int(w), activation, tuple(filter)) for w in widths)


def partition_for(form: str, d: int, linear: tuple[int, ...], additive: tuple[int, ...]
                  ) -> PredictorPartition:
    """Split predictors for one surface.

    ``linear`` and ``additive`` are the predictors given an interpretable
    role in the mixed forms; in lin+NN and GAM+NN every interpreted predictor
    takes the single interpretable role, and lin+GAM sends all remaining
    predictors to the spline part.
    """
    everything = tuple(range(d))
    interpreted = tuple(sorted(set(linear) | set(additive)))
    rest = tuple(j for j in everything if j not in interpreted)
    if form == "fully-linear":
        return PredictorPartition(linear=everything)
    if form == "fully-GAM":
        return PredictorPartition(additive=everything)
    if form == "fully-NN":
        return PredictorPartition(network=everything)
    if form == "lin+GAM":
        return PredictorPartition(linear=tuple(linear),
                                  additive=tuple(j for j in everything if j not in linear))
    if form == "lin+NN":
        return PredictorPartition(linear=interpreted, network=rest)
    if form == "GAM+NN":
        return PredictorPartition(additive=interpreted, network=rest)
    if form == "lin+GAM+NN":
        return PredictorPartition(linear=tuple(linear), additive=tuple(additive), network=rest)
    raise ValueError(f"unknown form {form!r}; choose from {FORMS}")


def bgev_model_spec(form: str, d: int, layers, n_knots: int = 20, smoothing: float = 0.0,
                    q_split=((), ()), s_split=((), ()), predictor_names=()) -> ModelSpec:
    """q_alpha (identity link), s_beta (exp link) and a shared logistic-link shape."""
    surfaces = []
    for name, link, (lin, add) in (("q", "identity", q_split), ("s", "exp", s_split)):
        part = partition_for(form, d, tuple(lin), tuple(add))
        surfaces.append(SurfaceSpec(name, link, part, n_knots, smoothing,
                                    tuple(layers) if part.network else ()))
    surfaces.append(SurfaceSpec("xi", "logistic"))
    return ModelSpec(d, tuple(surfaces), tuple(predictor_names))


def single_surface_spec(name: str, link: str, d: int, layers, predictor_names=()) -> ModelSpec:
    """A fully-network model for one parameter (threshold or occurrence probability)."""
    part = PredictorPartition(network=tuple(range(d)))
    return ModelSpec(d, (SurfaceSpec(name, link, part, layers=tuple(layers)),), tuple(predictor_names))


# the wildfire comparison: q gets 4 linear and 3 spline predictors, s gets 2 and 5
TABLE_ONE_Q = ((0, 1, 2, 3), (4, 5, 6))
TABLE_ONE_S = ((0, 1), (2, 3, 4, 5, 6))


def table_one_spec(form: str) -> ModelSpec:
    return bgev_model_spec(form, 20, mlp((10, 6, 3)), n_knots=20,
                           q_split=TABLE_ONE_Q, s_split=TABLE_ONE_S)
