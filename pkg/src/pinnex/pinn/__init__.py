"""Partially-interpretable parameter surfaces: linear, thin-plate spline and network parts."""

from .network import (LayerSpec, conv_forward, dense_forward, network_forward, pad_domain,
                      recurrent_forward)
from .prep import StandardizationStats, fit_standardization, place_knots, standardize
from .spline import penalty_matrix, penalty_value, spline_eval, tps_basis, tps_kernel
from .surface import (ModelSpec, PinnModel, PredictorPartition, SurfaceSpec, apply_link,
                      count_params, eval_theta)

__all__ = [
    "LayerSpec", "ModelSpec", "PinnModel", "PredictorPartition", "StandardizationStats",
    "SurfaceSpec", "apply_link", "conv_forward", "count_params", "dense_forward", "eval_theta",
    "fit_standardization", "network_forward", "pad_domain", "penalty_matrix", "penalty_value",
    "place_knots", "recurrent_forward", "spline_eval", "standardize", "tps_basis", "tps_kernel",
]
