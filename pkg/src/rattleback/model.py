"""Vector field, first integrals, Poisson structures and equilibria.

States are numpy arrays whose last axis holds ``(x, y, z)`` (pitching,
rolling, spinning).  Every function here broadcasts over leading axes, so a
batch of states of shape ``(n, 3)`` is evaluated in one call.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._dd import DD
from .errors import NonIntegerLambda, NotUnimodular, SingularPlane

__all__ = [
    "ModelParams",
    "RealizationParams",
    "EquilibriumKind",
    "Equilibrium",
    "Verdict",
    "ArnoldReport",
    "StabilityReport",
    "as_state",
    "rhs",
    "hamiltonian",
    "casimir",
    "grad_hamiltonian",
    "grad_casimir",
    "hessian_hamiltonian",
    "poisson_matrix",
    "rescale_nu",
    "hamiltonian_field",
    "family_field",
    "equilibria",
    "jacobian",
    "arnold_report",
    "classify_equilibrium",
]

EQUILIBRIUM_TOL = 1e-12
DEFINITENESS_TOL = 1e-12
UNIMODULAR_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """The aspect parameter ``lam`` (lambda > 0).

    ``lambda_is_integer`` is True only for integers >= 2, the range on which
    ``y**lambda`` is a polynomial and the Poisson/energy-Casimir machinery is
    defined on all of R^3.
    """

    lam: float

    def __post_init__(self):
        lam = float(self.lam)
        if not math.isfinite(lam) or lam <= 0:
            raise ValueError(f"lambda must be a finite positive number, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)

    @property
    def lambda_is_integer(self) -> bool:
        return self.lam >= 2 and self.lam == round(self.lam)

    @property
    def n(self) -> int:
        """Integer lambda; raises :class:`NonIntegerLambda` otherwise."""
        if not self.lambda_is_integer:
            raise NonIntegerLambda(
                f"lambda={self.lam:g} must be an integer >= 2 for this operation"
            )
        return int(round(self.lam))

    @property
    def sqrt_lam(self) -> float:
        return math.sqrt(self.lam)


@dataclass(frozen=True)
class RealizationParams:
    """A point ``[[a, b], [c, d]]`` of SL(2, R)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if abs(det - 1.0) > UNIMODULAR_TOL:
            raise NotUnimodular(f"ad - bc = {det!r}, expected 1")

    @classmethod
    def identity(cls) -> "RealizationParams":
        return cls(1.0, 0.0, 0.0, 1.0)


def as_state(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1:] != (3,):
        raise ValueError(f"state must have a trailing axis of length 3, got shape {s.shape}")
    return s


def _split(s):
    s = as_state(s)
    return s[..., 0], s[..., 1], s[..., 2]


def rhs(s, p: ModelParams) -> np.ndarray:
    """The rattleback field ``(lam*x*z, -y*z, y**2 - lam*x**2)``."""
    x, y, z = _split(s)
    lam = p.lam
    return np.stack((lam * x * z, -y * z, y * y - lam * x * x), axis=-1)


def hamiltonian(s, p: ModelParams):
    x, y, _ = _split(s)
    return x * y ** p.n


def casimir(s):
    s = as_state(s)
    return 0.5 * np.sum(s * s, axis=-1)


def grad_hamiltonian(s, p: ModelParams) -> np.ndarray:
    x, y, _ = _split(s)
    n = p.n
    yn1 = y ** (n - 1)
    return np.stack((yn1 * y, n * x * yn1, np.zeros_like(x)), axis=-1)


def grad_casimir(s) -> np.ndarray:
    return as_state(s).copy()


def hessian_hamiltonian(s, p: ModelParams) -> np.ndarray:
    x, y, _ = _split(s)
    n = p.n
    out = np.zeros(x.shape + (3, 3))
    out[..., 0, 1] = out[..., 1, 0] = n * y ** (n - 1)
    out[..., 1, 1] = n * (n - 1) * x * y ** (n - 2)
    return out


def _cross_matrix(w) -> np.ndarray:
    """Matrix of ``v -> v x w``; rows ``(0, w3, -w2), (-w3, 0, w1), (w2, -w1, 0)``."""
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = w3, -w2
    out[..., 1, 0], out[..., 1, 2] = -w3, w1
    out[..., 2, 0], out[..., 2, 1] = w2, -w1
    return out


def poisson_matrix(s) -> np.ndarray:
    """Poisson tensor generated by the Casimir ``C = |s|^2 / 2``."""
    return _cross_matrix(as_state(s))


def rescale_nu(s, p: ModelParams):
    _, y, _ = _split(s)
    if np.any(y == 0):
        raise SingularPlane("rescaling y**(1 - lambda) is undefined at y = 0")
    return y ** (1 - p.n)


def hamiltonian_field(s, p: ModelParams) -> np.ndarray:
    """``nu * Pi_C * grad H``; equals :func:`rhs` off the plane y = 0."""
    nu = rescale_nu(s, p)
    v = np.einsum("...ij,...j->...i", poisson_matrix(s), grad_hamiltonian(s, p))
    return nu[..., None] * v


def family_field(s, p: ModelParams, r: RealizationParams) -> np.ndarray:
    """Hamiltonian field of ``H_{c,d}`` for the bracket generated by ``C_{a,b}``.

    The product ``Pi_{a,b} grad H_{c,d}`` contains the terms ``ac s x s`` and
    ``bd grad H x grad H`` which cancel exactly; their rounding error is then
    multiplied by ``nu = y**(1-λ)``.  The product is therefore formed in
    double-double arithmetic and rounded once before scaling by ``nu``.
    """
    if not isinstance(r, RealizationParams):
        r = RealizationParams(*r)
    x, y, z = (DD(v) for v in _split(s))
    nu = rescale_nu(s, p)
    n = p.n
    a, b, c, d = r.a, r.b, r.c, r.d
    yn1 = y ** (n - 1)
    yn = yn1 * y
    nxy = n * (x * yn1)
    nbxy = b * nxy
    pi01, pi02, pi12 = a * z, -(a * y) - nbxy, a * x + b * yn
    g0 = c * x + d * yn
    g1 = c * y + d * nxy
    g2 = c * z
    out = np.stack((
        (pi01 * g1 + pi02 * g2).value(),
        (-(pi01 * g0) + pi12 * g2).value(),
        (-(pi02 * g0) - pi12 * g1).value(),
    ), axis=-1)
    return nu[..., None] * out


class EquilibriumKind(str, enum.Enum):
    STABLE_PLUS = "StablePlus"
    STABLE_MINUS = "StableMinus"
    ORIGIN = "Origin"
    SPIN_AXIS = "SpinAxis"


@dataclass(frozen=True)
class Equilibrium:
    kind: EquilibriumKind
    M: float
    point: np.ndarray = field(compare=False)

    @classmethod
    def make(cls, kind: EquilibriumKind, M: float, p: ModelParams) -> "Equilibrium":
        M = float(M)
        if M == 0 or kind is EquilibriumKind.ORIGIN:
            return cls(EquilibriumKind.ORIGIN, 0.0, np.zeros(3))
        if kind is EquilibriumKind.SPIN_AXIS:
            pt = (0.0, 0.0, M)
        elif kind is EquilibriumKind.STABLE_PLUS:
            pt = (M, M * p.sqrt_lam, 0.0)
        else:
            pt = (M, -M * p.sqrt_lam, 0.0)
        return cls(kind, M, np.array(pt))


def equilibria(M_list, p: ModelParams) -> list[Equilibrium]:
    out: list[Equilibrium] = []
    have_origin = False
    for M in M_list:
        if M == 0:
            if not have_origin:
                out.append(Equilibrium.make(EquilibriumKind.ORIGIN, 0.0, p))
                have_origin = True
            continue
        for kind in (EquilibriumKind.STABLE_MINUS, EquilibriumKind.STABLE_PLUS,
                     EquilibriumKind.SPIN_AXIS):
            out.append(Equilibrium.make(kind, M, p))
    return out


def jacobian(s, p: ModelParams) -> np.ndarray:
    x, y, z = _split(s)
    lam = p.lam
    J = np.zeros(x.shape + (3, 3))
    J[..., 0, 0] = lam * z
    J[..., 0, 2] = lam * x
    J[..., 1, 1] = -z
    J[..., 1, 2] = -y
    J[..., 2, 0] = -2 * lam * x
    J[..., 2, 1] = 2 * y
    return J


class Verdict(str, enum.Enum):
    LYAPUNOV_STABLE = "LyapunovStable"
    UNSTABLE = "Unstable"


@dataclass
class ArnoldReport:
    mu: float
    kernel_basis: np.ndarray
    restricted_hessian: np.ndarray
    positive_definite: bool


@dataclass
class StabilityReport:
    verdict: Verdict
    spectrum: np.ndarray
    arnold: ArnoldReport | None = None


def arnold_report(e: Equilibrium, p: ModelParams) -> ArnoldReport:
    """Energy-Casimir test ``F = C - mu*H`` at a nonzero e+/e- equilibrium.

    The kernel of dH at ``(M, ±M√λ, 0)`` is spanned by ``(∓√λ, 1, 0)`` and
    ``(0, 0, 1)``; in that basis the constrained second variation is
    ``diag(2(λ+1), 1)``.
    """
    if e.kind not in (EquilibriumKind.STABLE_PLUS, EquilibriumKind.STABLE_MINUS) or e.M == 0:
        raise ValueError(f"Arnold test applies to nonzero e+/e- equilibria, got {e.kind.value}")
    n = p.n
    sign = 1.0 if e.kind is EquilibriumKind.STABLE_PLUS else -1.0
    M = e.M
    mu = sign ** n / (M ** (n - 1) * p.sqrt_lam ** n)
    W = np.array([[-sign * p.sqrt_lam, 1.0, 0.0], [0.0, 0.0, 1.0]]).T
    hess_F = np.eye(3) - mu * hessian_hamiltonian(e.point, p)
    restricted = W.T @ hess_F @ W
    positive = bool(restricted[0, 0] > DEFINITENESS_TOL
                    and np.linalg.det(restricted) > DEFINITENESS_TOL)
    return ArnoldReport(mu=mu, kernel_basis=W.T.copy(), restricted_hessian=restricted,
                        positive_definite=positive)


def classify_equilibrium(e: Equilibrium, p: ModelParams) -> StabilityReport:
    spectrum = np.linalg.eigvals(jacobian(e.point, p))
    spectrum = spectrum[np.lexsort((spectrum.imag, spectrum.real))]
    if e.kind is EquilibriumKind.ORIGIN:
        # C itself is a Lyapunov function.
        return StabilityReport(Verdict.LYAPUNOV_STABLE, spectrum)
    if e.kind is EquilibriumKind.SPIN_AXIS:
        verdict = Verdict.UNSTABLE if spectrum.real.max() > 0 else Verdict.LYAPUNOV_STABLE
        return StabilityReport(verdict, spectrum)
    arnold = arnold_report(e, p)
    verdict = Verdict.LYAPUNOV_STABLE if arnold.positive_definite else Verdict.UNSTABLE
    return StabilityReport(verdict, spectrum, arnold)
