"""Lax pair ``dL/dt = [L, B]`` for the rattleback field."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, as_state, rhs

__all__ = ["LaxPair", "lax_matrices", "lax_residual", "isospectral_invariants"]


@dataclass
class LaxPair:
    L: np.ndarray
    B: np.ndarray


def _antisym(a12, a13, a23) -> np.ndarray:
    out = np.zeros(np.shape(a12) + (3, 3))
    out[..., 0, 1], out[..., 0, 2], out[..., 1, 2] = a12, a13, a23
    out[..., 1, 0], out[..., 2, 0], out[..., 2, 1] = -a12, -a13, -a23
    return out


def _l_entries(x, y, z, p):
    r, r1 = p.sqrt_lam, math.sqrt(p.lam + 1.0)
    return -x + y * r, x * r + y, z * r1


def lax_matrices(s, p: ModelParams) -> LaxPair:
    s = as_state(s)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    r, r1 = p.sqrt_lam, math.sqrt(p.lam + 1.0)
    L = _antisym(*_l_entries(x, y, z, p))
    B = _antisym((-x * r + y) * r1, np.zeros_like(x), z * r)
    return LaxPair(L, B)


def lax_residual(s, p: ModelParams):
    """Max-abs entry of ``dL/dt - (LB - BL)``, with dL/dt from the chain rule."""
    s = as_state(s)
    pair = lax_matrices(s, p)
    f = rhs(s, p)
    dL = _antisym(*_l_entries(f[..., 0], f[..., 1], f[..., 2], p))  # L is linear in s
    comm = pair.L @ pair.B - pair.B @ pair.L
    return np.max(np.abs(dL - comm), axis=(-2, -1))


def isospectral_invariants(s, p: ModelParams):
    """``trace(L²)`` and the sorted absolute eigenvalues of L.

    A real antisymmetric 3x3 matrix has spectrum ``{0, ±iω}`` with
    ``ω² = L12² + L13² + L23²``.
    """
    s = as_state(s)
    a12, a13, a23 = _l_entries(s[..., 0], s[..., 1], s[..., 2], p)
    w2 = a12 * a12 + a13 * a13 + a23 * a23
    w = np.sqrt(w2)
    eig_abs = np.stack((np.zeros_like(w), w, w), axis=-1)
    return -2.0 * w2, eig_abs
