"""Trajectory integration, section crossings and small-orbit periods."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoCrossings, NonFinite, StepUnderflow
from .model import ModelParams, as_state, casimir, hamiltonian, rhs

__all__ = [
    "Method",
    "IntegratorConfig",
    "Trajectory",
    "PeriodMeasurement",
    "integrate",
    "rk4_step",
    "advance",
    "section_crossings",
    "predicted_period_limit",
    "measure_small_period",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

Field = Callable[[np.ndarray, ModelParams], np.ndarray]

MIN_STEP = 1e-14


class Method(str, enum.Enum):
    RK4 = "rk4"
    RK45 = "rk45"


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.RK4
    step: float = 1e-3
    t_end: float = 10.0
    tol_abs: float = 1e-10
    tol_rel: float = 1e-10
    record_every: int = 1
    max_step: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not (self.tol_abs > 0 and self.tol_rel > 0):
            raise ValueError("tolerances must be positive")
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise ValueError("t_end must be finite and non-negative")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be a positive integer")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    drift_H: float | None = None
    drift_C: float | None = None

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class PeriodMeasurement:
    M: float
    amplitude: float
    measured_period: float
    predicted_limit: float
    period_std: float
    n_crossings: int

    @property
    def deviation(self) -> float:
        return abs(self.measured_period - self.predicted_limit)


def rk4_step(field: Field, s: np.ndarray, h: float, p: ModelParams) -> np.ndarray:
    k1 = field(s, p)
    k2 = field(s + 0.5 * h * k1, p)
    k3 = field(s + 0.5 * h * k2, p)
    k4 = field(s + h * k3, p)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def advance(field: Field, s: np.ndarray, tau: float, p: ModelParams,
            max_substep: float = 1e-3) -> np.ndarray:
    """Flow ``s`` forward by ``tau`` with uniform RK4 substeps no longer than ``max_substep``."""
    if tau == 0:
        return np.array(s, dtype=float)
    n = max(1, int(math.ceil(abs(tau) / max_substep - 1e-12)))
    h = tau / n
    for _ in range(n):
        s = rk4_step(field, s, h, p)
    return s


def _check_finite(s, t):
    if not np.all(np.isfinite(s)):
        raise NonFinite(f"state left the finite range at t={t:.6g}")


def _integrate_rk4(field, s, cfg, p):
    n = max(1, int(math.ceil(cfg.t_end / cfg.step - 1e-9))) if cfg.t_end > 0 else 0
    h = cfg.t_end / n if n else 0.0
    every = int(cfg.record_every)
    times = [0.0]
    states = [s]
    for i in range(1, n + 1):
        s = rk4_step(field, s, h, p)
        _check_finite(s, i * h)
        if i % every == 0 or i == n:
            times.append(i * h)
            states.append(s)
    return times, states


# Dormand-Prince 5(4) tableau.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_E = (
    35 / 384 - 5179 / 57600,
    0.0,
    500 / 1113 - 7571 / 16695,
    125 / 192 - 393 / 640,
    -2187 / 6784 + 92097 / 339200,
    11 / 84 - 187 / 2100,
    -1 / 40,
)


def _integrate_rk45(field, s, cfg, p):
    t, t_end = 0.0, cfg.t_end
    h = min(cfg.step, t_end) if t_end > 0 else 0.0
    h_max = cfg.max_step or max(t_end, cfg.step)
    every = int(cfg.record_every)
    times = [0.0]
    states = [s]
    k1 = field(s, p)
    accepted = 0
    while t < t_end:
        if t + h > t_end:
            h = t_end - t
        ks = [k1]
        for i in range(1, 7):
            inc = sum(a * k for a, k in zip(_DP_A[i], ks))
            ks.append(field(s + h * inc, p))
        s_new = s + h * sum(b * k for b, k in zip(_DP_B, ks) if b)
        err_vec = h * sum(e * k for e, k in zip(_DP_E, ks) if e)
        scale = cfg.tol_abs + cfg.tol_rel * np.maximum(np.abs(s), np.abs(s_new))
        err = float(np.max(np.abs(err_vec) / scale)) if s.size else 0.0
        if not math.isfinite(err):
            err = math.inf
        if err <= 1.0:
            t = t_end if t + h >= t_end else t + h
            _check_finite(s_new, t)
            s = s_new
            k1 = ks[6]  # first-same-as-last
            accepted += 1
            if accepted % every == 0 or t >= t_end:
                times.append(t)
                states.append(s)
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = max(0.1, 0.9 * err ** -0.2) if math.isfinite(err) else 0.1
        h = min(h * factor, h_max)
        if h < MIN_STEP and t < t_end:
            raise StepUnderflow(f"adaptive step fell to {h:.3g} at t={t:.6g}")
    return times, states


def integrate(s0, field: Field = rhs, cfg: IntegratorConfig | None = None,
              p: ModelParams | None = None) -> Trajectory:
    """Integrate ``ds/dt = field(s, p)`` from ``s0`` over ``[0, cfg.t_end]``.

    ``s0`` may be a single state or a batch of shape ``(n, 3)``; a batch is
    advanced in lockstep (the adaptive method uses the worst error of the
    batch).  Drift of H and C is filled in whenever it can be evaluated.
    """
    if p is None:
        raise ValueError("model parameters are required")
    cfg = cfg or IntegratorConfig()
    s = as_state(s0).copy()
    _check_finite(s, 0.0)
    if cfg.method is Method.RK4:
        times, states = _integrate_rk4(field, s, cfg, p)
    else:
        times, states = _integrate_rk45(field, s, cfg, p)
    traj = Trajectory(np.asarray(times), np.asarray(states))
    c = casimir(traj.states)
    traj.drift_C = float(np.max(np.abs(c - c[0])))
    if p.lambda_is_integer:
        H = hamiltonian(traj.states, p)
        traj.drift_H = float(np.max(np.abs(H - H[0])))
    return traj


def _hermite_root(z0, z1, d0, d1, h):
    """Root in [0, h] of the cubic Hermite interpolant (z0 < 0 <= z1)."""
    def cubic(u):
        u2, u3 = u * u, u * u * u
        return ((2 * u3 - 3 * u2 + 1) * z0 + (u3 - 2 * u2 + u) * h * d0
                + (-2 * u3 + 3 * u2) * z1 + (u3 - u2) * h * d1)

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if cubic(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * h


def section_crossings(traj: Trajectory, p: ModelParams, field: Field = rhs, axis: int = 2,
                      tol: float = 1e-12, max_substep: float = 1e-3) -> np.ndarray:
    """Times at which the coordinate ``axis`` crosses zero upwards.

    A crossing only counts after the coordinate has been below
    ``-1e-9 * scale``, so round-off jitter around an equilibrium lying on the
    section is ignored.  Each crossing is bracketed between stored samples,
    located on the cubic Hermite interpolant, then polished by secant
    iteration on the true flow until ``|coordinate| < tol``.
    """
    states = traj.states
    if states.ndim != 2:
        raise ValueError("section_crossings expects a single trajectory")
    t = traj.times
    q = states[:, axis]
    arm = 1e-9 * max(1.0, float(np.max(np.abs(states))))
    crossings = []
    armed = False
    for k in range(len(t) - 1):
        if q[k] < -arm:
            armed = True
        if not (armed and q[k] < 0 <= q[k + 1]):
            continue
        armed = False
        s_k = states[k]
        h = t[k + 1] - t[k]
        d0 = field(s_k, p)[axis]
        d1 = field(states[k + 1], p)[axis]
        tau = _hermite_root(q[k], q[k + 1], d0, d1, h)

        def g(tt):
            return advance(field, s_k, tt, p, max_substep)[axis]

        a, fa = tau, g(tau)
        b = tau + (1e-7 * h if tau + 1e-7 * h <= h else -1e-7 * h)
        fb = g(b)
        for _ in range(30):
            if abs(fb) < tol or fb == fa:
                break
            a, fa, b = b, fb, b - fb * (b - a) / (fb - fa)
            fb = g(b)
        if abs(fb) > abs(fa):
            b, fb = a, fa
        crossings.append(t[k] + b)
    if len(crossings) < 2:
        raise NoCrossings(f"found {len(crossings)} upward crossing(s); at least 2 are needed")
    return np.asarray(crossings)


def predicted_period_limit(M: float, p: ModelParams) -> float:
    """Small-amplitude period near e±: pi*sqrt(2) / (|M| sqrt(lam(lam+1)))."""
    return math.pi * math.sqrt(2.0) / (abs(M) * math.sqrt(p.lam * (p.lam + 1.0)))


def measure_small_period(M: float, p: ModelParams, amplitude: float | None = None,
                         n_gaps: int = 8, dt: float = 1e-3) -> PeriodMeasurement:
    """Period of the small orbit around ``e+ = (|M|, |M|√λ, 0)``.

    The equilibrium is displaced by ``amplitude`` along ``(-√λ, 1, 0)``
    (tangent to its Casimir sphere), pulled back radially onto the sphere
    ``C = (λ+1)M²/2``, and integrated with fixed RK4.  The period is the mean
    gap between successive upward z = 0 crossings.
    """
    if M == 0:
        raise ValueError("M must be nonzero")
    A = abs(M)
    amplitude = 1e-3 * A if amplitude is None else float(amplitude)
    e = np.array([A, A * p.sqrt_lam, 0.0])
    direction = np.array([-p.sqrt_lam, 1.0, 0.0]) / math.sqrt(p.lam + 1.0)
    s0 = e + amplitude * direction
    s0 *= math.sqrt(p.lam + 1.0) * A / np.linalg.norm(s0)
    limit = predicted_period_limit(M, p)
    cfg = IntegratorConfig(Method.RK4, step=dt, t_end=(n_gaps + 1.5) * limit)
    traj = integrate(s0, rhs, cfg, p)
    times = section_crossings(traj, p, rhs, max_substep=dt)
    gaps = np.diff(times)
    return PeriodMeasurement(
        M=float(M),
        amplitude=amplitude,
        measured_period=float((times[-1] - times[0]) / (len(times) - 1)),
        predicted_limit=limit,
        period_std=float(np.std(gaps)),
        n_crossings=len(times),
    )


def write_trajectory_csv(path, traj: Trajectory, p: ModelParams) -> None:
    """CSV with header ``t,x,y,z,H,C`` and 17 significant digits."""
    states = traj.states
    if states.ndim != 2:
        raise ValueError("only single trajectories can be exported")
    C = casimir(states)
    if p.lambda_is_integer:
        H = hamiltonian(states, p)
    else:
        y = states[:, 1]
        with np.errstate(invalid="ignore"):
            H = np.where(y >= 0, states[:, 0] * np.abs(y) ** p.lam, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "z", "H", "C"])
        for row in zip(traj.times, states[:, 0], states[:, 1], states[:, 2], H, C):
            w.writerow([format(float(v), ".17g") for v in row])


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(times=data[:, 0], states=data[:, 1:4].copy())
