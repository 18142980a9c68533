"""Thin-plate spline basis and its smoothing penalty."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad


def tps_kernel(r) -> np.ndarray:
    """r^2 log r with the continuous limit 0 at r = 0."""
    r = np.abs(np.asarray(r, dtype=np.float64))
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


def tps_basis(x, knots) -> np.ndarray:
    """psi(x, knot_j) for every value of x; output shape x.shape + (k,)."""
    x = np.asarray(x, dtype=np.float64)
    knots = np.asarray(knots, dtype=np.float64)
    return tps_kernel(x[..., None] - knots)


def penalty_matrix(knots) -> np.ndarray:
    """S*[j, k] = psi(x*_j, x*_k)."""
    return tps_basis(knots, knots)


def spline_eval(basis, omega):
    """sum_j omega_j * basis_j over the last axis of a (..., k) basis."""
    b = np.asarray(basis)
    flat = b.reshape(-1, b.shape[-1])
    out = ad.matmul(flat, omega)
    return ad.reshape(out, b.shape[:-1])


def penalty_value(omega, penalty: np.ndarray, lam):
    """omega^T S_lambda omega / 2 for one predictor's block (tensor-aware)."""
    if np.all(np.asarray(lam) == 0):
        return 0.0
    s_omega = ad.matmul(np.asarray(penalty), omega)
    return ad.mul(ad.sum_(ad.mul(omega, s_omega)), 0.5 * float(lam))
