"""Energy-Casimir map, stratum classification and fiber tracing."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContinuationStalled, SeedNotFound, WrongStratum
from .model import Equilibrium, EquilibriumKind, ModelParams, casimir, hamiltonian

__all__ = [
    "ECValue",
    "Stratum",
    "FiberTopology",
    "FiberTrace",
    "ec",
    "boundary_value",
    "classify_value",
    "fiber_topology",
    "stable_equilibria_for",
    "trace_fiber",
    "nonconvexity_witness",
    "polyline_distance",
    "write_fiber_csv",
]


@dataclass(frozen=True)
class ECValue:
    h: float
    c: float


class Stratum(str, enum.Enum):
    OUTSIDE = "Outside"
    SIGMA_S0 = "SigmaS0"
    SIGMA_U = "SigmaU"
    SIGMA_S_MINUS_STAR = "SigmaSMinusStar"
    SIGMA_S_PLUS_STAR = "SigmaSPlusStar"
    SIGMA_P_MINUS = "SigmaPMinus"
    SIGMA_P_PLUS = "SigmaPPlus"


class FiberTopology(str, enum.Enum):
    EMPTY = "Empty"
    POINT = "Point"
    TWO_POINTS = "TwoPoints"
    TWO_CIRCLES = "TwoCircles"
    HETEROCLINIC_SET = "HeteroclinicSet"


_TOPOLOGY = {
    Stratum.OUTSIDE: FiberTopology.EMPTY,
    Stratum.SIGMA_S0: FiberTopology.POINT,
    Stratum.SIGMA_U: FiberTopology.HETEROCLINIC_SET,
    Stratum.SIGMA_S_MINUS_STAR: FiberTopology.TWO_POINTS,
    Stratum.SIGMA_S_PLUS_STAR: FiberTopology.TWO_POINTS,
    Stratum.SIGMA_P_MINUS: FiberTopology.TWO_CIRCLES,
    Stratum.SIGMA_P_PLUS: FiberTopology.TWO_CIRCLES,
}

_STAR = (Stratum.SIGMA_S_MINUS_STAR, Stratum.SIGMA_S_PLUS_STAR)
_PRINCIPAL = (Stratum.SIGMA_P_MINUS, Stratum.SIGMA_P_PLUS)


def ec(s, p: ModelParams) -> ECValue:
    """``(H, C)`` of a single state."""
    return ECValue(float(hamiltonian(s, p)), float(casimir(s)))


def boundary_value(c: float, p: ModelParams) -> float:
    """Squared energy on the boundary of the image: λ^λ (2/(λ+1))^(λ+1) c^(λ+1)."""
    if c < 0:
        raise ValueError("c must be non-negative")
    n = p.n
    return n ** n * (2.0 / (n + 1)) ** (n + 1) * c ** (n + 1)


def classify_value(v: ECValue, p: ModelParams, tol_rel: float = 1e-9) -> Stratum:
    h, c = float(v.h), float(v.c)
    if c < 0:
        return Stratum.OUTSIDE
    b = boundary_value(c, p)
    h2 = h * h
    if h2 > b * (1.0 + tol_rel):
        return Stratum.OUTSIDE
    if c == 0:
        return Stratum.SIGMA_S0
    if h == 0:
        return Stratum.SIGMA_U
    if abs(h2 - b) <= tol_rel * b:
        return Stratum.SIGMA_S_PLUS_STAR if h > 0 else Stratum.SIGMA_S_MINUS_STAR
    return Stratum.SIGMA_P_PLUS if h > 0 else Stratum.SIGMA_P_MINUS


def fiber_topology(st: Stratum) -> FiberTopology:
    return _TOPOLOGY[Stratum(st)]


def stable_equilibria_for(v: ECValue, p: ModelParams, tol_rel: float = 1e-9) -> list[Equilibrium]:
    """The two stable equilibria forming a boundary fiber.

    With ``M = sqrt(2c/(λ+1))``: for even λ the fiber over h > 0 is
    ``{e-, e+}`` and over h < 0 it is ``{-e-, -e+}``; for odd λ it is
    ``{e+, -e+}`` over h > 0 and ``{e-, -e-}`` over h < 0.
    """
    st = classify_value(v, p, tol_rel)
    if st not in _STAR:
        raise WrongStratum(f"({v.h:g}, {v.c:g}) lies in {st.value}, not on a stable-equilibrium stratum")
    M = math.sqrt(2.0 * v.c / (p.n + 1))
    plus, minus = EquilibriumKind.STABLE_PLUS, EquilibriumKind.STABLE_MINUS
    # -e+^M = e+^{-M} and -e-^M = e-^{-M}.
    if p.n % 2 == 0:
        pair = [(minus, M), (plus, M)] if v.h > 0 else [(minus, -M), (plus, -M)]
    else:
        pair = [(plus, M), (plus, -M)] if v.h > 0 else [(minus, M), (minus, -M)]
    return [Equilibrium.make(kind, m, p) for kind, m in pair]


@dataclass
class FiberTrace:
    components: list[np.ndarray]
    residual_H: float
    residual_C: float
    closure_gaps: list[float]

    @property
    def residual(self) -> float:
        return max(self.residual_H, self.residual_C)


def _correct(x, y, z, h, c, n, tol, max_iter=12):
    """Minimum-norm Newton on (H - h, C - c); updates stay normal to the fiber."""
    for _ in range(max_iter):
        yn1 = y ** (n - 1)
        gh0, gh1 = yn1 * y, n * x * yn1
        r1 = x * yn1 * y - h
        r2 = 0.5 * (x * x + y * y + z * z) - c
        if abs(r1) < tol and abs(r2) < tol:
            return x, y, z
        # J = [[gh0, gh1, 0], [x, y, z]]; delta = J^T (J J^T)^{-1} r
        a11 = gh0 * gh0 + gh1 * gh1
        a12 = gh0 * x + gh1 * y
        a22 = x * x + y * y + z * z
        det = a11 * a22 - a12 * a12
        if det == 0 or not math.isfinite(det):
            return None
        l1 = (a22 * r1 - a12 * r2) / det
        l2 = (a11 * r2 - a12 * r1) / det
        x -= l1 * gh0 + l2 * x
        y -= l1 * gh1 + l2 * y
        z -= l2 * z
    return None


def _tangent(x, y, z, n):
    yn1 = y ** (n - 1)
    a0, a1 = yn1 * y, n * x * yn1
    # grad H x grad C with grad H = (a0, a1, 0), grad C = (x, y, z)
    tx, ty, tz = a1 * z, -a0 * z, a0 * y - a1 * x
    norm = math.sqrt(tx * tx + ty * ty + tz * tz)
    if norm == 0:
        return None
    return tx / norm, ty / norm, tz / norm


def _trace_component(seed, h, c, n, step, tol, max_steps):
    x0, y0, z0 = seed
    pts = [(x0, y0, z0)]
    x, y, z = x0, y0, z0
    left = False
    ds = step
    for _ in range(max_steps):
        t = _tangent(x, y, z, n)
        if t is None:
            raise ContinuationStalled("tangent vanished (critical point on the fiber)")
        nxt = None
        while ds >= step * 1e-6:
            nxt = _correct(x + ds * t[0], y + ds * t[1], z + ds * t[2], h, c, n, tol)
            if nxt is not None:
                break
            ds *= 0.5
        if nxt is None:
            raise ContinuationStalled(f"corrector failed near {(x, y, z)}")
        x, y, z = nxt
        ds = min(step, 2 * ds)
        gap = math.sqrt((x - x0) ** 2 + (y - y0) ** 2 + (z - z0) ** 2)
        if not left:
            left = gap > 2 * step
        elif gap < step:
            return np.array(pts), gap
        pts.append((x, y, z))
    raise ContinuationStalled(f"component did not close after {max_steps} steps")


def _grid_seeds(h, c, n, grid=64):
    """Sign changes of H - h on a spherical-angle grid, refined by bisection."""
    r = math.sqrt(2.0 * c)
    theta = (np.arange(grid) + 0.5) * math.pi / grid
    phi = np.arange(grid) * 2.0 * math.pi / grid
    T, P = np.meshgrid(theta, phi, indexing="ij")

    def f(tt, pp):
        st = np.sin(tt)
        return r * st * np.cos(pp) * (r * st * np.sin(pp)) ** n - h

    F = f(T, P)
    dphi = 2.0 * math.pi / grid
    neighbors = (
        (F, T, P, np.roll(F, -1, axis=1), T, P + dphi),  # along phi, periodic
        (F[:-1], T[:-1], P[:-1], F[1:], T[1:], P[1:]),  # along theta
    )
    pairs = []
    for Fa, Ta, Pa, Fb, Tb, Pb in neighbors:
        mask = np.sign(Fa) != np.sign(Fb)
        pairs.extend(zip(Ta[mask], Pa[mask], Tb[mask], Pb[mask]))
    seeds = []
    for ta, pa, tb, pb in pairs:
        fa = f(ta, pa)
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fm = f(ta + mid * (tb - ta), pa + mid * (pb - pa))
            if np.sign(fm) == np.sign(fa):
                lo = mid
            else:
                hi = mid
        tt, pp = ta + lo * (tb - ta), pa + lo * (pb - pa)
        seeds.append((r * math.sin(tt) * math.cos(pp), r * math.sin(tt) * math.sin(pp),
                      r * math.cos(tt)))
    return seeds


def _geodesic_seeds(h, c, n):
    """One fiber point per extremum of H on the sphere.

    Along the quarter great circle from an extremum to the pole (0, 0, r),
    H scales by cos(s)^(n+1), so each such arc crosses H = h exactly once.
    """
    r = math.sqrt(2.0 * c)
    A = r / math.sqrt(n + 1)
    seeds = []
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            e = (sx * A, sy * A * math.sqrt(n), 0.0)
            He = e[0] * e[1] ** n
            if He * h <= 0 or abs(h) >= abs(He):
                continue
            s = math.acos((h / He) ** (1.0 / (n + 1)))
            seeds.append((math.cos(s) * e[0], math.cos(s) * e[1], r * math.sin(s)))
    return seeds


def polyline_distance(points, polyline, closed: bool = True) -> np.ndarray:
    """Euclidean distance from each point to a polyline (closed by default)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(polyline, dtype=float)
    b = np.roll(a, -1, axis=0) if closed else a[1:]
    a = a if closed else a[:-1]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom[denom == 0] = 1.0
    out = np.empty(len(pts))
    chunk = max(1, 2_000_000 // max(1, len(a)))
    for i in range(0, len(pts), chunk):
        q = pts[i:i + chunk, None, :]
        u = np.clip(np.einsum("kij,ij->ki", q - a, ab) / denom, 0.0, 1.0)
        d = q - (a + u[..., None] * ab)
        out[i:i + chunk] = np.sqrt(np.min(np.einsum("kij,kij->ki", d, d), axis=1))
    return out


def trace_fiber(v: ECValue, p: ModelParams, step: float = 1e-3, tol: float = 1e-11) -> FiberTrace:
    """Trace the two closed curves ``{H = h} ∩ {C = c}`` of a principal fiber.

    Predictor along ``grad H x grad C``; corrector is minimum-norm Newton on
    ``(H - h, C - c)``, whose updates lie in the plane normal to the tangent.
    """
    st = classify_value(v, p)
    if st not in _PRINCIPAL:
        raise WrongStratum(f"({v.h:g}, {v.c:g}) lies in {st.value}; only principal strata are traced")
    n = p.n
    h, c = float(v.h), float(v.c)
    r = math.sqrt(2.0 * c)
    max_steps = int(20 * math.pi * r / step) + 100
    seeds = []
    for raw in _grid_seeds(h, c, n) + _geodesic_seeds(h, c, n):
        fixed = _correct(*raw, h, c, n, tol)
        if fixed is not None:
            seeds.append(fixed)
    if not seeds:
        raise SeedNotFound(f"no point of the fiber over ({h:g}, {c:g}) was found")
    components, gaps = [], []
    pending = np.array(seeds)
    while len(pending):
        comp, gap = _trace_component(tuple(pending[0]), h, c, n, step, tol, max_steps)
        components.append(comp)
        gaps.append(gap)
        d = polyline_distance(pending, comp)
        pending = pending[d > 10 * step]
    allpts = np.concatenate(components)
    return FiberTrace(
        components=components,
        residual_H=float(np.max(np.abs(hamiltonian(allpts, p) - h))),
        residual_C=float(np.max(np.abs(casimir(allpts) - c))),
        closure_gaps=gaps,
    )


def nonconvexity_witness(p: ModelParams, sign: int = 1) -> tuple[ECValue, ECValue, ECValue]:
    """Two images of stable equilibria whose midpoint is not in Im(EC).

    Uses ``e+`` for M = 1 and M = 2; on the boundary ``h ∝ c^((λ+1)/2)`` is
    strictly convex for λ >= 2, so the chord lies outside the image.
    """
    n = p.n
    sgn = 1.0 if sign >= 0 else -1.0

    def image(M):
        return ECValue(sgn * M ** (n + 1) * p.sqrt_lam ** n, (n + 1) * M * M / 2.0)

    a, b = image(1.0), image(2.0)
    mid = ECValue(0.5 * (a.h + b.h), 0.5 * (a.c + b.c))
    return a, b, mid


def write_fiber_csv(path, trace: FiberTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "idx", "x", "y", "z"])
        for ci, comp in enumerate(trace.components):
            for idx, (x, y, z) in enumerate(comp):
                w.writerow([ci, idx] + [format(float(v), ".17g") for v in (x, y, z)])
