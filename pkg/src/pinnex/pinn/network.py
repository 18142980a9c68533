"""Dense, convolutional and simple recurrent layers for the network component.

Network inputs are arrays whose last axis holds features.  Dense layers act
on that axis alone; convolutional layers need a (T, H, W, C) grid; recurrent
layers run along axis 0 (time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import value_of

ACTIVATIONS = {"relu": ad.relu, "identity": ad.identity, "sigmoid": ad.sigmoid}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int
    activation: str = "relu"
    filter: tuple[int, int] = (3, 3)
    lookback: int = 0
    lookahead: int = 0

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "recurrent"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.width < 1:
            raise ValueError("layer width must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv" and (self.filter[0] % 2 == 0 or self.filter[1] % 2 == 0):
            raise ValueError("convolution filter dimensions must be odd")
        if self.lookback < 0 or self.lookahead < 0:
            raise ValueError("recurrent lookback/lookahead must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "width": self.width, "activation": self.activation,
                "filter": list(self.filter), "lookback": self.lookback, "lookahead": self.lookahead}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        if "filter" in d:
            d["filter"] = tuple(d["filter"])
        return cls(**d)


def layer_shapes(spec: LayerSpec, n_in: int) -> dict[str, tuple]:
    if spec.kind == "dense":
        return {"W": (n_in, spec.width), "b": (spec.width,)}
    if spec.kind == "conv":
        return {"W": (spec.filter[0], spec.filter[1], n_in, spec.width), "b": (spec.width,)}
    return {"W": (n_in, spec.width), "U": (spec.width, spec.width), "b": (spec.width,)}


def network_shapes(layers, n_in: int) -> dict[str, tuple]:
    """Parameter shapes of a layer stack followed by a bias-free output layer."""
    shapes = {}
    width = n_in
    for j, spec in enumerate(layers):
        for key, shp in layer_shapes(spec, width).items():
            shapes[f"{j}.{key}"] = shp
        width = spec.width
    shapes["out"] = (width,)
    return shapes


def init_network(layers, n_in: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shp in network_shapes(layers, n_in).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shp)
            continue
        if len(shp) == 4:
            fan_in, fan_out = shp[0] * shp[1] * shp[2], shp[0] * shp[1] * shp[3]
        elif len(shp) == 2:
            fan_in, fan_out = shp
        else:
            fan_in, fan_out = shp[0], 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shp)
    return params


def _lastaxis_matmul(x, w):
    xv = value_of(x)
    lead = xv.shape[:-1]
    flat = ad.reshape(x, (-1, xv.shape[-1]))
    out = ad.matmul(flat, w)
    n_out = value_of(w).shape[1] if value_of(w).ndim == 2 else None
    return ad.reshape(out, lead + ((n_out,) if n_out else ()))


def dense_forward(x, W, b, activation: str = "relu"):
    """h(b + W^T x) applied over the last axis."""
    xv, Wv = value_of(x), value_of(W)
    if xv.shape[-1] != Wv.shape[0]:
        raise ValueError(f"dense layer expects {Wv.shape[0]} inputs, got {xv.shape[-1]}")
    return ACTIVATIONS[activation](ad.add(_lastaxis_matmul(x, W), b))


def conv_forward(x, W, b, activation: str = "relu"):
    """Per output channel: h(b + sum over input channels of windowed weighted sums)."""
    if value_of(x).ndim != 4:
        raise ValueError("convolutional layers need a gridded (T, H, W, C) input")
    return ACTIVATIONS[activation](ad.add(ad.conv2d(x, W), b))


def recurrent_forward(x, W, U, b, lookback: int, lookahead: int, activation: str = "relu"):
    """Simple recurrent layer over a finite window along axis 0.

    For target time t the state is reset to zero before t - lookback and
    updated as h(b + W^T x_t* + U^T state_{t*-1}) for t* up to t + lookahead,
    where the output is read.  Targets whose window leaves the series get
    zero output and must be masked (see :func:`recurrent_valid_times`).
    """
    xv = value_of(x)
    T = xv.shape[0]
    span = lookback + lookahead + 1
    if T < span:
        raise ValueError(f"sequence of length {T} is shorter than the window {span}")
    n_valid = T - span + 1
    state = None
    for k in range(span):
        step = ad.getitem(x, slice(k, k + n_valid))
        pre = ad.add(_lastaxis_matmul(step, W), b)
        if state is not None:
            pre = ad.add(pre, _lastaxis_matmul(state, U))
        state = ACTIVATIONS[activation](pre)
    width = value_of(b).shape[0]
    parts = []
    if lookback:
        parts.append(np.zeros((lookback,) + xv.shape[1:-1] + (width,)))
    parts.append(state)
    if lookahead:
        parts.append(np.zeros((lookahead,) + xv.shape[1:-1] + (width,)))
    return ad.concat(parts, axis=0) if len(parts) > 1 else state


def recurrent_valid_times(T: int, layers) -> np.ndarray:
    """Boolean mask over time of targets whose every recurrent window fits."""
    valid = np.ones(T, dtype=bool)
    for spec in layers:
        if spec.kind == "recurrent":
            valid[:spec.lookback] = False
            if spec.lookahead:
                valid[T - spec.lookahead:] = False
    return valid


def padding_width(layers) -> tuple[int, int]:
    """Half-widths (ph, pw) needed by the largest convolution filters."""
    d1 = max((s.filter[0] for s in layers if s.kind == "conv"), default=1)
    d2 = max((s.filter[1] for s in layers if s.kind == "conv"), default=1)
    return (d1 - 1) // 2, (d2 - 1) // 2


def pad_domain(shape: tuple[int, int], layers) -> tuple[int, int]:
    """Padded grid size (D1 + max d1 - 1, D2 + max d2 - 1)."""
    ph, pw = padding_width(layers)
    return shape[0] + 2 * ph, shape[1] + 2 * pw


def network_forward(x, params: dict, layers, prefix: str = ""):
    """Run the stack and the bias-free output layer; returns x.shape[:-1] outputs.

    With convolutional layers the input grid is zero-padded (the standardised
    predictor mean) to the padded domain once, the stack runs on the padded
    grid and the output is cropped back.
    """
    ph, pw = padding_width(layers)
    h = ad.pad_hw(x, ph, pw) if (ph or pw) else x
    for j, spec in enumerate(layers):
        W, b = params[f"{prefix}{j}.W"], params[f"{prefix}{j}.b"]
        if spec.kind == "dense":
            h = dense_forward(h, W, b, spec.activation)
        elif spec.kind == "conv":
            h = conv_forward(h, W, b, spec.activation)
        else:
            h = recurrent_forward(h, W, params[f"{prefix}{j}.U"], b,
                                  spec.lookback, spec.lookahead, spec.activation)
    out = _lastaxis_matmul(h, params[f"{prefix}out"])
    if ph or pw:
        hv = value_of(out)
        out = ad.getitem(out, (slice(None), slice(ph, hv.shape[1] - ph), slice(pw, hv.shape[2] - pw)))
    return out
