"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations are recorded on the innermost active :class:`Tape`.  Every
function in this module accepts plain numpy arrays as well as
:class:`Tensor` objects; when none of the inputs is a tensor the plain
numpy result is returned, so model and loss code can be written once and
evaluated either with or without gradient tracking.

Example::

    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    tape.gradient(y, [x])   # [array(6.)]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation."""

    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)


def value_of(x):
    """The raw numpy value of ``x`` (tensor or array-like)."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _any_tensor(*args) -> bool:
    return any(isinstance(a, Tensor) for a in args)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _record(value, parents, vjp) -> Tensor:
    tape = _active_tape()
    tracked = tape is not None and any(
        isinstance(p, Tensor) and p.requires_grad for p in parents
    )
    out = Tensor(value, requires_grad=tracked)
    if tracked:
        tape._nodes.append((out, parents, vjp))
    return out


def _note_kink(x: np.ndarray, at: float = 0.0) -> None:
    tape = _active_tape()
    if tape is not None and tape.track_kinks:
        tape.kinks.append(np.sign(x - at).astype(np.int8))


class Tape:
    """Ordered record of primitive operations for one forward pass.

    ``track_kinks`` makes non-differentiable primitives (ReLU, clip) store
    the side of their kink each input lies on; :func:`grad_check` uses this
    to exclude finite differences that straddle a kink.
    """

    def __init__(self, track_kinks: bool = False):
        self._nodes: list = []
        self.track_kinks = track_kinks
        self.kinks: list[np.ndarray] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self._nodes)

    def gradient(self, output: Tensor, sources, seed=None):
        """Adjoints of a scalar ``output`` with respect to ``sources``.

        ``sources`` may be a single tensor, a sequence or a dict of tensors;
        the result mirrors that structure.  Sources that do not influence
        the output receive zeros.
        """
        if not isinstance(output, Tensor):
            raise TypeError("output must be a Tensor recorded on this tape")
        if output.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        adjoints = {id(output): np.ones_like(output.value) if seed is None
                    else np.asarray(seed, dtype=np.float64).reshape(output.shape)}
        for out, parents, vjp in reversed(self._nodes):
            g = adjoints.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not (isinstance(parent, Tensor) and parent.requires_grad):
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + pg
                else:
                    adjoints[key] = pg

        def grad_of(t):
            g = adjoints.get(id(t))
            return np.zeros_like(t.value) if g is None else g

        if isinstance(sources, Tensor):
            return grad_of(sources)
        if isinstance(sources, dict):
            return {k: grad_of(t) for k, t in sources.items()}
        return [grad_of(t) for t in sources]


def backward(tape: Tape, output: Tensor, leaves) -> dict:
    """Gradients of ``output`` for each named leaf (dict in, dict out)."""
    return tape.gradient(output, leaves)


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    if not _any_tensor(a, b):
        return np.add(a, b)
    return _record(value_of(a) + value_of(b), (a, b), lambda g: (g, g))


def sub(a, b):
    if not _any_tensor(a, b):
        return np.subtract(a, b)
    return _record(value_of(a) - value_of(b), (a, b), lambda g: (g, -g))


def neg(a):
    if not _any_tensor(a):
        return np.negative(a)
    return _record(-value_of(a), (a,), lambda g: (-g,))


def mul(a, b):
    if not _any_tensor(a, b):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    if not _any_tensor(a, b):
        return np.divide(a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _record(out, (a, b), lambda g: (g / bv, -g * out / bv))


def reciprocal(a):
    if not _any_tensor(a):
        return 1.0 / np.asarray(a, dtype=np.float64)
    out = 1.0 / value_of(a)
    return _record(out, (a,), lambda g: (-g * out * out,))


def power(a, exponent: float):
    """``a ** exponent`` for a constant real exponent."""
    if isinstance(exponent, Tensor):
        raise TypeError("tensor exponents: use exp(log(a) * b)")
    if not _any_tensor(a):
        return np.power(a, exponent)
    av = value_of(a)
    return _record(av ** exponent, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


def exp(a):
    if not _any_tensor(a):
        return np.exp(a)
    out = np.exp(value_of(a))
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    if not _any_tensor(a):
        return np.log(a)
    av = value_of(a)
    return _record(np.log(av), (a,), lambda g: (g / av,))


def sigmoid(a):
    av = value_of(a)
    out = special.expit(av)
    if not _any_tensor(a):
        return out
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    av = value_of(a)
    _note_kink(av)
    # gradient at exactly 0 is taken as 0
    out = np.maximum(av, 0.0)
    if not _any_tensor(a):
        return out
    return _record(out, (a,), lambda g: (g * (av > 0.0),))


def identity(a):
    return a


def clip(a, lo: float, hi: float):
    av = value_of(a)
    _note_kink(av, lo)
    _note_kink(av, hi)
    out = np.clip(av, lo, hi)
    if not _any_tensor(a):
        return out
    return _record(out, (a,), lambda g: (g * ((av > lo) & (av < hi)),))


def sum_(a, axis=None):
    if not _any_tensor(a):
        return np.sum(a, axis=axis)
    av = value_of(a)
    shape = av.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _record(np.sum(av, axis=axis), (a,), vjp)


def mean(a):
    n = value_of(a).size
    return mul(sum_(a), 1.0 / n)


def matmul(a, b):
    """Matrix product for 2-D ``a`` and 1-D or 2-D ``b``."""
    if not _any_tensor(a, b):
        return np.matmul(a, b)
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ValueError(f"matmul supports (n,k)@(k,) and (n,k)@(k,m); got {av.shape}@{bv.shape}")

    need_a = isinstance(a, Tensor) and a.requires_grad
    need_b = isinstance(b, Tensor) and b.requires_grad

    def vjp(g):
        ga = gb = None
        if need_a:
            ga = np.outer(g, bv) if bv.ndim == 1 else g @ bv.T
        if need_b:
            gb = av.T @ g
        return ga, gb

    return _record(av @ bv, (a, b), vjp)


def reshape(a, shape):
    if not _any_tensor(a):
        return np.reshape(a, shape)
    av = value_of(a)
    return _record(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def getitem(a, index):
    """Indexing with numpy semantics; repeated integer indices accumulate."""
    if not _any_tensor(a):
        return np.asarray(a)[index]
    av = value_of(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, index, g)
        return (out,)

    return _record(av[index], (a,), vjp)


def take(a, index):
    """Gather along axis 0 with *unique* indices (or a boolean mask)."""
    if not _any_tensor(a):
        return np.asarray(a)[index]
    av = value_of(a)

    def vjp(g):
        out = np.zeros_like(av)
        out[index] = g
        return (out,)

    return _record(av[index], (a,), vjp)


def concat(items, axis: int = 0):
    if not _any_tensor(*items):
        return np.concatenate([np.asarray(i) for i in items], axis=axis)
    values = [value_of(i) for i in items]
    cuts = np.cumsum([v.shape[axis] for v in values])[:-1]
    return _record(np.concatenate(values, axis=axis), tuple(items),
                   lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(items, axis: int = 0):
    expanded = [reshape(i, _expand_shape(value_of(i).shape, axis)) for i in items]
    return concat(expanded, axis=axis)


def _expand_shape(shape, axis):
    shape = list(shape)
    shape.insert(axis if axis >= 0 else len(shape) + axis + 1, 1)
    return tuple(shape)


def pad_hw(a, ph: int, pw: int):
    """Zero-pad axes 1 and 2 of a (T, H, W, C) array."""
    if ph == 0 and pw == 0:
        return a
    widths = ((0, 0), (ph, ph), (pw, pw), (0, 0))
    if not _any_tensor(a):
        return np.pad(a, widths)
    av = value_of(a)
    h, w = av.shape[1], av.shape[2]
    return _record(np.pad(av, widths), (a,),
                   lambda g: (g[:, ph:ph + h, pw:pw + w, :],))


def _windows(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (T, H+kh-1, W+kw-1, C) -> (T, H, W, kh, kw, C) view
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3)


def conv2d(x, w):
    """'Same' 2-D convolution (cross-correlation) with zero padding.

    ``x`` has shape (T, H, W, C_in), ``w`` has shape (kh, kw, C_in, C_out)
    with odd kh, kw.  Output shape is (T, H, W, C_out).
    """
    xv, wv = value_of(x), value_of(w)
    kh, kw, cin, cout = wv.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("filter dimensions must be odd")
    if xv.ndim != 4 or xv.shape[3] != cin:
        raise ValueError(f"conv2d input {xv.shape} does not match filter {wv.shape}")
    ph, pw = kh // 2, kw // 2
    t, h, wd, _ = xv.shape
    xp = np.pad(xv, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _windows(xp, kh, kw).reshape(t * h * wd, kh * kw * cin)
    wmat = wv.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(t, h, wd, cout)
    if not _any_tensor(x, w):
        return out

    def vjp(g):
        g2 = g.reshape(t * h * wd, cout)
        gw = (cols.T @ g2).reshape(wv.shape)
        gcols = (g2 @ wmat.T).reshape(t, h, wd, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + h, j:j + wd, :] += gcols[:, :, :, i, j, :]
        return gxp[:, ph:ph + h, pw:pw + wd, :], gw

    return _record(out, (x, w), vjp)


# ---------------------------------------------------------------------------
# regularized incomplete beta, evaluated by Lentz's continued fraction


def _betacf(x: np.ndarray, a: float, b: float, tol: float, max_iter: int) -> np.ndarray:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) < tol):
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_cf(x, a: float, b: float, tol: float = 1e-12, max_iter: int = 300) -> np.ndarray:
    """Regularized incomplete beta I_x(a, b), clamped to 0/1 outside [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 1.0, 1.0, 0.0)
    inside = (x > 0.0) & (x < 1.0)
    if not np.any(inside):
        return out
    xi = x[inside]
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = np.exp(lbeta + a * np.log(xi) + b * np.log1p(-xi))
    flip = xi > (a + 1.0) / (a + b + 2.0)
    res = np.empty_like(xi)
    if np.any(~flip):
        xs = xi[~flip]
        res[~flip] = front[~flip] * _betacf(xs, a, b, tol, max_iter) / a
    if np.any(flip):
        xs = 1.0 - xi[flip]
        res[flip] = 1.0 - front[flip] * _betacf(xs, b, a, tol, max_iter) / b
    out[inside] = res
    return out


def beta_pdf(x, a: float, b: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    inside = (x > 0.0) & (x < 1.0)
    out = np.zeros_like(x)
    xi = x[inside]
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    out[inside] = np.exp(lbeta + (a - 1.0) * np.log(xi) + (b - 1.0) * np.log1p(-xi))
    return out


def betapdf(x, a: float, b: float):
    """Differentiable beta density in x (zero outside (0, 1))."""
    xv = value_of(x)
    out = beta_pdf(xv, a, b)
    if not _any_tensor(x):
        return out

    def vjp(g):
        inside = (xv > 0.0) & (xv < 1.0)
        xs = np.where(inside, xv, 0.5)
        slope = out * ((a - 1.0) / xs - (b - 1.0) / (1.0 - xs))
        return (g * np.where(inside, slope, 0.0),)

    return _record(out, (x,), vjp)


def betainc(x, a: float, b: float):
    """Differentiable (in x) regularized incomplete beta function."""
    xv = value_of(x)
    out = betainc_cf(xv, a, b)
    if not _any_tensor(x):
        return out
    return _record(out, (x,), lambda g: (g * beta_pdf(xv, a, b),))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new params and new state."""
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        v = (1.0 - state.beta2) * g * g if v is None else state.beta2 * v + (1.0 - state.beta2) * g * g
        new_m[name], new_v[name] = m, v
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    names: list
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    excluded: np.ndarray
    tol: float

    @property
    def failed(self) -> np.ndarray:
        return (self.rel_error > self.tol) & ~self.excluded

    @property
    def passed(self) -> bool:
        return not bool(np.any(self.failed))

    @property
    def max_rel_error(self) -> float:
        keep = ~self.excluded
        return float(self.rel_error[keep].max()) if np.any(keep) else 0.0

    def summary(self) -> str:
        return (f"{len(self.names)} entries, {int(self.excluded.sum())} excluded at kinks, "
                f"{int(self.failed.sum())} failed, max rel err {self.max_rel_error:.3g} (tol {self.tol:g})")


def grad_check(loss_fn, params: dict, h: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn(params)`` with central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.  Entries whose
    +h / -h evaluations fall on different sides of a ReLU or clip kink are
    reported as excluded rather than failed.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, requires_grad=True) for k, v in base.items()}
    with Tape() as tape:
        loss = loss_fn(leaves)
    analytic = tape.gradient(loss, leaves)

    def evaluate(trial):
        with Tape(track_kinks=True) as t:
            val = float(value_of(loss_fn(trial)))
        return val, t.kinks

    names, a_list, n_list, excl = [], [], [], []
    for key, arr in base.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            trial = dict(base)
            plus = flat.copy()
            plus[i] += h
            trial[key] = plus.reshape(arr.shape)
            fp, kp = evaluate(trial)
            minus = flat.copy()
            minus[i] -= h
            trial[key] = minus.reshape(arr.shape)
            fm, km = evaluate(trial)
            straddles = any(np.any(p != m) for p, m in zip(kp, km))
            names.append(f"{key}[{i}]")
            a_list.append(float(analytic[key].reshape(-1)[i]))
            n_list.append((fp - fm) / (2.0 * h))
            excl.append(straddles)
    a = np.array(a_list)
    n = np.array(n_list)
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return GradCheckReport(names, a, n, rel, np.array(excl, dtype=bool), tol)
