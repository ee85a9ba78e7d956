"""Casimir-preserving perturbations that asymptotically stabilize a chosen fiber.

Every perturbation has the form ``rhs + eps * g(s) * D(s)`` with

    D(s) = ( y(λx² - y² - z²), x(-λx² + y² - λz²), (λ+1)xyz ),

and ``y^(λ-1) D = grad C x (grad C x grad H)``, which is orthogonal to
grad C, so C stays a first integral.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import ecmap
from .errors import BasinViolation, ParamMissing
from .integrate import IntegratorConfig, Method, integrate
from .model import ModelParams, as_state, casimir, grad_hamiltonian, hamiltonian, rhs

__all__ = [
    "PerturbationKind",
    "PerturbationSpec",
    "ConvergenceRecord",
    "DEFAULT_EPSILON",
    "skeleton_field",
    "perturbed_field",
    "lyapunov_value",
    "lie_derivative_check",
    "beta0",
    "equilibrium_level",
    "target_casimir",
    "target_equilibria",
    "project_to_sphere",
    "sample_initial_state",
    "run_convergence",
    "write_convergence_csv",
]


class PerturbationKind(str, enum.Enum):
    EQUILIBRIA_PLUS = "EquilibriaPlus"    # factor (H + K): drives H to -K
    EQUILIBRIA_MINUS = "EquilibriaMinus"  # factor (H - K): drives H to +K
    PERIODIC_ORBIT = "PeriodicOrbit"
    HETEROCLINIC = "Heteroclinic"


DEFAULT_EPSILON = {
    PerturbationKind.EQUILIBRIA_PLUS: 0.5,
    PerturbationKind.EQUILIBRIA_MINUS: 0.5,
    PerturbationKind.PERIODIC_ORBIT: 0.1,
    PerturbationKind.HETEROCLINIC: 1.0,
}


@dataclass(frozen=True)
class PerturbationSpec:
    """Which perturbation to use.

    ``M`` is required for the equilibrium and heteroclinic kinds, ``h`` for
    the periodic-orbit kind.  ``c`` fixes the Casimir level of a periodic
    orbit; it only enters the Lyapunov function and the convergence runs.
    """

    kind: PerturbationKind
    epsilon: float
    M: float | None = None
    h: float | None = None
    c: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kind is PerturbationKind.PERIODIC_ORBIT:
            if self.h is None:
                raise ParamMissing("PeriodicOrbit perturbation needs h")
        else:
            if self.M is None:
                raise ParamMissing(f"{self.kind.value} perturbation needs M")
            if self.M == 0:
                raise ValueError("M must be nonzero")


@dataclass
class ConvergenceRecord:
    times: np.ndarray
    dist_to_target: np.ndarray
    lyapunov_values: np.ndarray
    casimir_drift: float
    final_state: np.ndarray = field(default=None)
    initial_state: np.ndarray = field(default=None)

    @property
    def final_distance(self) -> float:
        return float(self.dist_to_target[-1])

    def monotone_violations(self, allowance: float = 1e-10) -> int:
        """Steps where the Lyapunov value rose by more than ``allowance``."""
        return int(np.sum(np.diff(self.lyapunov_values) > allowance))


def _direction(s, p: ModelParams) -> np.ndarray:
    s = as_state(s)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    lam = p.lam
    return np.stack((y * (lam * x * x - y * y - z * z),
                     x * (-lam * x * x + y * y - lam * z * z),
                     (lam + 1) * x * y * z), axis=-1)


def skeleton_field(s, p: ModelParams, h: float) -> np.ndarray:
    """``(H - h) * grad C x (grad C x grad H)``, written out in coordinates."""
    n = p.n
    y = as_state(s)[..., 1]
    return ((hamiltonian(s, p) - h) * y ** (n - 1))[..., None] * _direction(s, p)


def equilibrium_level(M: float, p: ModelParams) -> float:
    """``K = |M|^(λ+1) (√λ)^λ``, the value of H at e+^|M|."""
    n = p.n
    return abs(M) ** (n + 1) * p.sqrt_lam ** n


def _gain(spec: PerturbationSpec, s, p: ModelParams):
    n = p.n
    x, y = s[..., 0], s[..., 1]
    H = x * y ** n
    kind = spec.kind
    if kind is PerturbationKind.HETEROCLINIC:
        return x * y ** (2 * n - 1)
    if kind is PerturbationKind.PERIODIC_ORBIT:
        return (H - spec.h) * y ** (n - 1)
    K = equilibrium_level(spec.M, p)
    sign = 1.0 if kind is PerturbationKind.EQUILIBRIA_PLUS else -1.0
    return (H + sign * K) * y ** (n - 1)


def perturbed_field(spec: PerturbationSpec, s, p: ModelParams) -> np.ndarray:
    s = as_state(s)
    with np.errstate(over="ignore", invalid="ignore"):  # rejected trial steps at large eps
        return rhs(s, p) + spec.epsilon * _gain(spec, s, p)[..., None] * _direction(s, p)


def _targets(spec: PerturbationSpec, p: ModelParams) -> tuple[float | None, float]:
    """(C target, H target); C target is None when the perturbation does not fix it."""
    kind = spec.kind
    if kind is PerturbationKind.HETEROCLINIC:
        return 0.5 * spec.M ** 2, 0.0
    if kind is PerturbationKind.PERIODIC_ORBIT:
        return spec.c, spec.h
    K = equilibrium_level(spec.M, p)
    c = 0.5 * (p.n + 1) * spec.M ** 2
    return c, (-K if kind is PerturbationKind.EQUILIBRIA_PLUS else K)


def target_casimir(spec: PerturbationSpec, p: ModelParams) -> float:
    c, _ = _targets(spec, p)
    if c is None:
        raise ParamMissing("PeriodicOrbit needs c to fix the Casimir level")
    return c


def lyapunov_value(spec: PerturbationSpec, s, p: ModelParams):
    """``(C - C*)² + (H - H*)²``; for the heteroclinic kind ``x² y^(2λ)``."""
    s = as_state(s)
    H = hamiltonian(s, p)
    if spec.kind is PerturbationKind.HETEROCLINIC:
        return H * H
    c_t, h_t = target_casimir(spec, p), _targets(spec, p)[1]
    return (casimir(s) - c_t) ** 2 + (H - h_t) ** 2


def _grad_lyapunov(spec, s, p):
    H = hamiltonian(s, p)
    gH = grad_hamiltonian(s, p)
    if spec.kind is PerturbationKind.HETEROCLINIC:
        return 2 * H[..., None] * gH
    c_t, h_t = target_casimir(spec, p), _targets(spec, p)[1]
    return 2 * (casimir(s) - c_t)[..., None] * s + 2 * (H - h_t)[..., None] * gH


def lie_derivative_check(spec: PerturbationSpec, s, p: ModelParams):
    """Derivative of the Lyapunov function along the perturbed field.

    Returns ``(numeric, closed_form)``: numeric is ``grad L . field``;
    closed_form is ``-2 eps y^(2(λ-1)) (H - H*)² Q`` (for the heteroclinic
    kind ``-2 eps x² y^(2(2λ-1)) Q``) with
    ``Q = λ²x²z² + y²z² + (y² - λx²)²``.
    """
    s = as_state(s)
    numeric = np.einsum("...i,...i->...", _grad_lyapunov(spec, s, p), perturbed_field(spec, s, p))
    n = p.n
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    Q = n * n * x * x * z * z + y * y * z * z + (y * y - n * x * x) ** 2
    eps = spec.epsilon
    if spec.kind is PerturbationKind.HETEROCLINIC:
        closed = -2 * eps * x * x * y ** (2 * (2 * n - 1)) * Q
    else:
        h_t = _targets(spec, p)[1]
        closed = -2 * eps * y ** (2 * (n - 1)) * (hamiltonian(s, p) - h_t) ** 2 * Q
    return numeric, closed


def beta0(M: float, p: ModelParams) -> float:
    """Largest level of x²y^(2λ) whose sublevel set on C = M²/2 avoids e±."""
    n = p.n
    return M ** (2 * (n + 1)) * n ** n / (n + 1) ** (n + 1)


def target_equilibria(spec: PerturbationSpec, p: ModelParams) -> np.ndarray:
    """The pair of equilibria an equilibrium-kind perturbation converges to."""
    c, h = _targets(spec, p)
    pair = ecmap.stable_equilibria_for(ecmap.ECValue(h, c), p)
    return np.array([e.point for e in pair])


def project_to_sphere(s, c: float) -> np.ndarray:
    s = as_state(s)
    r = np.linalg.norm(s)
    if r == 0:
        raise BasinViolation("cannot project the origin onto a Casimir sphere")
    return s * (math.sqrt(2.0 * c) / r)


def _check_basin(spec: PerturbationSpec, s, p: ModelParams) -> None:
    H = float(hamiltonian(s, p))
    kind = spec.kind
    if kind is PerturbationKind.HETEROCLINIC:
        b0 = beta0(spec.M, p)
        # L = beta0 exactly at e+-; allow for the rounding of points placed there
        if not H * H < b0 * (1 - 1e-12):
            raise BasinViolation(f"x^2 y^(2λ) = {H * H:.6g} is not below beta0 = {b0:.6g}")
    elif kind is PerturbationKind.PERIODIC_ORBIT:
        if s[1] == 0:
            raise BasinViolation("initial state lies on the invariant plane y = 0")
        st = ecmap.classify_value(ecmap.ECValue(spec.h, spec.c), p)
        if st not in (ecmap.Stratum.SIGMA_P_MINUS, ecmap.Stratum.SIGMA_P_PLUS):
            raise BasinViolation(f"(h, c) lies in {st.value}, not in a periodic stratum")
    else:
        h_t = _targets(spec, p)[1]
        # H moves monotonically toward h_t, so the level set H = 0 separates basins.
        if not H * h_t > 0:
            raise BasinViolation(f"H(s0) = {H:.6g} must have the sign of the target {h_t:.6g}")


def sample_initial_state(spec: PerturbationSpec, p: ModelParams, rng: np.random.Generator,
                         radius: float = 0.3) -> np.ndarray:
    """Seeded initial condition on the target Casimir sphere, inside the basin."""
    c = target_casimir(spec, p)
    R = math.sqrt(2.0 * c)
    kind = spec.kind
    if kind in (PerturbationKind.EQUILIBRIA_MINUS, PerturbationKind.EQUILIBRIA_PLUS):
        e = target_equilibria(spec, p)[rng.integers(2)]
        v = rng.normal(size=3)
        v -= e * (v @ e) / (e @ e)
        v *= rng.uniform(0.3, 1.0) * radius / np.linalg.norm(v)
        return project_to_sphere(e + v, c)
    for _ in range(10_000):
        s = rng.normal(size=3)
        s *= R / np.linalg.norm(s)
        if kind is PerturbationKind.HETEROCLINIC:
            if hamiltonian(s, p) ** 2 < 0.5 * beta0(spec.M, p):
                return s
        elif abs(s[1]) > 1e-3 * R:
            return s
    raise BasinViolation("could not sample an initial state inside the basin")


def _great_circle_distance(s, normal_axis: int, R: float) -> np.ndarray:
    """Distance from points on the sphere to the great circle {s[axis] = 0}."""
    q = s.copy()
    q[:, normal_axis] = 0.0
    norm = np.linalg.norm(q, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    foot = np.where(norm[:, None] > 0, q * (R / safe)[:, None], np.array([R, 0, 0]))
    return np.linalg.norm(s - foot, axis=1)


def _polyline_kdtree_distance(states, components) -> np.ndarray:
    """Distance to closed polylines; nearest vertex via k-d tree, then its two segments."""
    best = np.full(len(states), np.inf)
    for comp in components:
        tree = cKDTree(comp)
        _, idx = tree.query(states)
        m = len(comp)
        for nb in (-1, 1):
            a, b = comp[idx], comp[(idx + nb) % m]
            ab = b - a
            denom = np.einsum("ij,ij->i", ab, ab)
            u = np.clip(np.einsum("ij,ij->i", states - a, ab) / np.where(denom > 0, denom, 1.0), 0, 1)
            d = np.linalg.norm(states - (a + u[:, None] * ab), axis=1)
            best = np.minimum(best, d)
    return best


def _distances(spec, states, p, fiber_step):
    kind = spec.kind
    if kind is PerturbationKind.HETEROCLINIC:
        R = abs(spec.M)
        return np.minimum(_great_circle_distance(states, 0, R),
                          _great_circle_distance(states, 1, R))
    if kind is PerturbationKind.PERIODIC_ORBIT:
        trace = ecmap.trace_fiber(ecmap.ECValue(spec.h, spec.c), p, step=fiber_step)
        return _polyline_kdtree_distance(states, trace.components)
    targets = target_equilibria(spec, p)
    return np.min(np.linalg.norm(states[:, None, :] - targets[None], axis=2), axis=1)


def run_convergence(spec: PerturbationSpec, s0, cfg: IntegratorConfig | None, p: ModelParams,
                    fiber_step: float = 1e-3) -> ConvergenceRecord:
    """Integrate the perturbed field from ``s0`` projected onto the target sphere."""
    p.n
    c = target_casimir(spec, p)
    s = project_to_sphere(np.asarray(s0, dtype=float), c)
    _check_basin(spec, s, p)
    cfg = cfg or IntegratorConfig(Method.RK45, step=1e-3, t_end=200.0)
    traj = integrate(s, lambda q, pp: perturbed_field(spec, q, pp), cfg, p)
    states = traj.states
    if spec.kind is PerturbationKind.PERIODIC_ORBIT and np.any(states[:, 1] * s[1] <= 0):
        raise BasinViolation("trajectory reached the plane y = 0")
    return ConvergenceRecord(
        times=traj.times,
        dist_to_target=_distances(spec, states, p, fiber_step),
        lyapunov_values=np.asarray(lyapunov_value(spec, states, p)),
        casimir_drift=float(np.max(np.abs(casimir(states) - casimir(s)))),
        final_state=states[-1].copy(),
        initial_state=s,
    )


def write_convergence_csv(path, rec: ConvergenceRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "dist_to_target", "lyapunov"])
        for row in zip(rec.times, rec.dist_to_target, rec.lyapunov_values):
            w.writerow([format(float(v), ".17g") for v in row])
