"""Closed-form heteroclinic connections between (0, 0, -|M|) and (0, 0, |M|)."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, casimir, hamiltonian, rhs

__all__ = [
    "HetBranch",
    "HetParams",
    "het_state",
    "het_state_printed",
    "het_residual",
    "het_limits",
    "het_fiber_check",
    "write_heteroclinic_csv",
]


class HetBranch(str, enum.Enum):
    PLUS_ZERO = "PlusZero"    # (x, 0, z~)
    MINUS_ZERO = "MinusZero"  # (-x, 0, z~)
    ZERO_PLUS = "ZeroPlus"    # (0, y, z)
    ZERO_MINUS = "ZeroMinus"  # (0, -y, z)


@dataclass(frozen=True)
class HetParams:
    M: float
    k: float = 0.0

    def __post_init__(self):
        if self.M == 0:
            raise ValueError("M must be nonzero")


def _xz_printed(A, M2, lam, k, t):
    ch, sh = np.cosh, np.sinh
    u = A * (lam * t + k)
    a, b = 2 * A * k, 2 * A * lam * t
    den = M2 * ch(a) + ch(b) + M2 * sh(a) + sh(b)
    x = 2 * M2 * (ch(u) + sh(u)) / den
    zt = A * (M2 * ch(a) - ch(b) + M2 * sh(a) - sh(b)) / den
    return x, zt


def _xz_scaled(A, M2, lam, k, t):
    # cosh(w) + sinh(w) = e^w; divide through by e^m, m the largest exponent.
    alpha = math.log(M2) + 2 * A * k
    beta = 2 * A * lam * t
    m = np.maximum(alpha, beta)
    ea, eb = np.exp(alpha - m), np.exp(beta - m)
    x = 2 * np.exp(math.log(M2) + A * (lam * t + k) - m) / (ea + eb)
    zt = A * (ea - eb) / (ea + eb)
    return x, zt


def _yz_printed(A, M2, k, t):
    ch, sh = np.cosh, np.sinh
    v = A * (t + k)
    y = 2 * M2 / ((M2 + 1) * ch(v) + (M2 - 1) * sh(v))
    z = A * (-1 + M2 * ch(2 * v) + M2 * sh(2 * v)) / (1 + M2 * ch(2 * v) + M2 * sh(2 * v))
    return y, z


def _yz_scaled(A, M2, k, t):
    v = A * (t + k)
    a, b = math.log(M2) + v, -v  # denominator of y is e^a + e^b
    m = np.maximum(a, b)
    y = 2 * np.exp(math.log(M2) - m) / (np.exp(a - m) + np.exp(b - m))
    g = math.log(M2) + 2 * v      # z = A (e^g - 1) / (e^g + 1)
    m2 = np.maximum(g, 0.0)
    eg, e0 = np.exp(g - m2), np.exp(-m2)
    z = A * (eg - e0) / (eg + e0)
    return y, z


def het_state(b: HetBranch, hp: HetParams, p: ModelParams, t) -> np.ndarray:
    """State on branch ``b`` at time(s) ``t``; returns shape ``t.shape + (3,)``.

    Evaluated through ``cosh(w) + sinh(w) = e^w`` with numerator and
    denominator scaled by the largest exponent, which is exact and avoids
    both overflow and the cancellation of cosh + sinh for w << 0.
    """
    b = HetBranch(b)
    p.n  # closed forms are stated for integer lambda
    t = np.asarray(t, dtype=float)
    A, M2, k, lam = abs(hp.M), hp.M * hp.M, hp.k, p.lam
    if b in (HetBranch.PLUS_ZERO, HetBranch.MINUS_ZERO):
        first, third = _xz_scaled(A, M2, lam, k, t)
        if b is HetBranch.MINUS_ZERO:
            first = -first
        return np.stack((first, np.zeros_like(first), third), axis=-1)
    second, third = _yz_scaled(A, M2, k, t)
    if b is HetBranch.ZERO_MINUS:
        second = -second
    return np.stack((np.zeros_like(second), second, third), axis=-1)


def het_state_printed(b: HetBranch, hp: HetParams, p: ModelParams, t) -> np.ndarray:
    """Verbatim cosh/sinh evaluation; accurate only for moderate arguments."""
    b = HetBranch(b)
    t = np.asarray(t, dtype=float)
    A, M2, k, lam = abs(hp.M), hp.M * hp.M, hp.k, p.lam
    if b in (HetBranch.PLUS_ZERO, HetBranch.MINUS_ZERO):
        x, zt = _xz_printed(A, M2, lam, k, t)
        x = -x if b is HetBranch.MINUS_ZERO else x
        return np.stack((x, np.zeros_like(x), zt), axis=-1)
    y, z = _yz_printed(A, M2, k, t)
    y = -y if b is HetBranch.ZERO_MINUS else y
    return np.stack((np.zeros_like(y), y, z), axis=-1)


def _derivative(b, hp, p, t, h):
    f = lambda tt: het_state(b, hp, p, tt)
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)


def _pointwise_residual(b, hp, p, t, h):
    d1 = _derivative(b, hp, p, t, h)
    d2 = _derivative(b, hp, p, t, h / 2)
    deriv = (16 * d2 - d1) / 15
    return np.max(np.abs(deriv - rhs(het_state(b, hp, p, t), p)), axis=-1)


def het_residual(b: HetBranch, hp: HetParams, p: ModelParams, t_samples, h: float = 1e-4) -> float:
    """Max |d/dt state - rhs(state)|, derivative by Richardson-extrapolated 5-point differences."""
    t = np.asarray(t_samples, dtype=float)
    return float(np.max(_pointwise_residual(b, hp, p, t, h)))


def het_limits(b: HetBranch, hp: HetParams, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """States far in the past and far in the future (the alpha and omega limits)."""
    T = 50.0 / abs(hp.M) * max(1.0, 1.0 / p.lam)
    start, end = het_state(b, hp, p, np.array([-T, T]))
    return start, end


def het_fiber_check(b: HetBranch, hp: HetParams, p: ModelParams, t_samples) -> tuple[float, float]:
    """Max deviations of (H, C) from the singular value (0, M²/2)."""
    s = het_state(b, hp, p, t_samples)
    return (float(np.max(np.abs(hamiltonian(s, p)))),
            float(np.max(np.abs(casimir(s) - 0.5 * hp.M * hp.M))))


def write_heteroclinic_csv(path, b: HetBranch, hp: HetParams, p: ModelParams, t_samples) -> None:
    """CSV ``t,x,y,z,H,C,residual`` with the pointwise ODE residual."""
    t = np.asarray(t_samples, dtype=float)
    s = het_state(b, hp, p, t)
    H, C = hamiltonian(s, p), casimir(s)
    res = _pointwise_residual(b, hp, p, t, 1e-4)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "z", "H", "C", "residual"])
        for i, ti in enumerate(t):
            row = (ti, *s[i], H[i], C[i], res[i])
            w.writerow([format(float(v), ".17g") for v in row])
