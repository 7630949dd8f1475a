"""Cubic flux algebra: evaluation, critical densities, regime classification.

The model flux is rho(s) = alpha*beta*s^3 - 2*alpha*s^2 + s with diffusivity
sigma = rho'.  Depending on (alpha, beta) in the unit square, sigma keeps one
of six sign patterns on [0, 1]; the doubly-degenerate pattern FDBDF (forward /
degenerate / backward / degenerate / forward) is the one every downstream
construction targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "FluxParams",
    "Regime",
    "ModelType",
    "CriticalData",
    "eval_rho",
    "eval_sigma",
    "eval_sigma_prime",
    "classify_regime",
    "critical_points",
    "in_fdbdf",
]

# Relative snap tolerance for classification boundaries (degenerate
# discriminant, roots landing on 0 or 1).  Boundary points classify into the
# degenerate regime deterministically.
SNAP_TOL = 1e-12


class Regime(str, Enum):
    """Sign word of sigma on [0, 1]: F > 0, D = 0 (isolated/endpoint), B < 0."""

    F = "F"
    FD = "FD"
    FDF = "FDF"
    FDB = "FDB"
    FDBD = "FDBD"
    FDBDF = "FDBDF"


class ModelType(str, Enum):
    TYPE_I = "I"
    TYPE_II = "II"


@dataclass(frozen=True)
class FluxParams:
    """Adhesion strength alpha and volume-filling strength beta, both in [0, 1]."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError(f"(alpha, beta) must lie in [0,1]^2, got {(self.alpha, self.beta)}")


@dataclass(frozen=True)
class CriticalData:
    """Derived critical densities and flux levels for an FDBDF parameter pair.

    s0_minus/s0_plus are the two interior roots of sigma; s1/s2 are the
    branch-inverse images of the usable flux range [rho(s0_plus), r_star].
    """

    params: FluxParams
    s0_minus: float
    s0_plus: float
    s1_minus: float
    s1_plus: float
    s2_minus: float
    s2_plus: float
    r_star: float
    model_type: ModelType

    @property
    def rho_s0_plus(self) -> float:
        return eval_rho(self.params, self.s0_plus)

    def to_dict(self) -> dict:
        return {
            "s0_minus": self.s0_minus,
            "s0_plus": self.s0_plus,
            "s1_minus": self.s1_minus,
            "s1_plus": self.s1_plus,
            "s2_minus": self.s2_minus,
            "s2_plus": self.s2_plus,
            "r_star": self.r_star,
            "rho_s0_plus": self.rho_s0_plus,
            "model_type": self.model_type.value,
        }


def eval_rho(p: FluxParams, s):
    """Flux alpha*beta*s^3 - 2*alpha*s^2 + s, valid for all real s."""
    s = np.asarray(s, dtype=float) if not np.isscalar(s) else s
    return ((p.alpha * p.beta * s - 2.0 * p.alpha) * s + 1.0) * s


def eval_sigma(p: FluxParams, s):
    """Diffusivity sigma = rho' = 3*alpha*beta*s^2 - 4*alpha*s + 1."""
    s = np.asarray(s, dtype=float) if not np.isscalar(s) else s
    return (3.0 * p.alpha * p.beta * s - 4.0 * p.alpha) * s + 1.0


def eval_sigma_prime(p: FluxParams, s):
    """sigma' = 6*alpha*beta*s - 4*alpha."""
    return 6.0 * p.alpha * p.beta * s - 4.0 * p.alpha


def _sigma_roots(p: FluxParams, snap_tol: float = SNAP_TOL):
    """Roots of sigma with boundary snapping.

    Returns (kind, roots) where kind is one of "none", "double", "pair".
    The quadratic formula is evaluated in the cancellation-safe form: the
    larger-magnitude root first, the other via the product of roots.
    Roots within snap_tol (relative) of 0 or 1 are snapped exactly.
    """
    a, b = p.alpha, p.beta
    if a == 0.0:
        return "none", ()
    if b == 0.0:
        # sigma = 1 - 4*alpha*s, affine
        return "pair_affine", (1.0 / (4.0 * a),)
    disc = 4.0 * a * a - 3.0 * a * b  # quarter discriminant of 3ab s^2 - 4a s + 1
    scale = max(4.0 * a * a, 3.0 * a * b)
    if disc < -snap_tol * scale:
        return "none", ()

    def snap(x: float) -> float:
        if abs(x - 1.0) <= snap_tol * (1.0 + abs(x)):
            return 1.0
        if abs(x) <= snap_tol:
            return 0.0
        return x

    if abs(disc) <= snap_tol * scale:
        return "double", (snap(2.0 / (3.0 * b)),)
    rt = math.sqrt(disc)
    s_plus = (2.0 * a + rt) / (3.0 * a * b)
    s_minus = 1.0 / (3.0 * a * b * s_plus)  # product of roots = 1/(3ab)
    return "pair", (snap(s_minus), snap(s_plus))


def classify_regime(p: FluxParams, snap_tol: float = SNAP_TOL) -> Regime:
    """Sign word of sigma on [0, 1], read left to right.

    Every (alpha, beta) in the unit square classifies; points on regime
    boundaries (within snap_tol relative) land in the degenerate class.
    """
    kind, roots = _sigma_roots(p, snap_tol)
    if kind == "none":
        return Regime.F
    if kind == "pair_affine":
        (r,) = roots
        if abs(r - 1.0) <= snap_tol * 2.0:
            return Regime.FD
        return Regime.F if r > 1.0 else Regime.FDB
    if kind == "double":
        (r,) = roots
        if r >= 1.0:
            return Regime.FD if r == 1.0 else Regime.F
        return Regime.FDF  # sigma(0)=1>0 forces r>0
    s_minus, s_plus = roots
    if s_minus >= 1.0:
        return Regime.FD if s_minus == 1.0 else Regime.F
    # s_minus < 1; sigma(0)=1>0 so s_minus > 0
    if s_plus > 1.0:
        return Regime.FDB
    if s_plus == 1.0:
        return Regime.FDBD
    return Regime.FDBDF


def in_fdbdf(p: FluxParams) -> bool:
    return classify_regime(p) is Regime.FDBDF


def _bisect_increasing(f, lo: float, hi: float, target: float, tol: float = 1e-15) -> float:
    """Bisection for f increasing on [lo, hi] with f(lo) <= target <= f(hi)."""
    flo = f(lo) - target
    if flo >= 0.0:
        return lo
    if f(hi) - target <= 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) - target <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def critical_points(p: FluxParams) -> CriticalData:
    """Full critical data for an FDBDF parameter pair.

    Raises ValueError when sigma does not have two simple roots interior to
    (0, 1).
    """
    if not in_fdbdf(p):
        raise ValueError(
            f"critical_points requires FDBDF parameters, got {classify_regime(p).value} "
            f"at (alpha, beta)=({p.alpha}, {p.beta})"
        )
    _, (s0m, s0p) = _sigma_roots(p)
    rho_s0m = eval_rho(p, s0m)
    rho_1 = eval_rho(p, 1.0)
    if rho_s0m <= rho_1:
        model_type, r_star = ModelType.TYPE_I, rho_s0m
    else:
        model_type, r_star = ModelType.TYPE_II, rho_1
    rho_s0p = eval_rho(p, s0p)

    def rho(s):
        return eval_rho(p, s)

    s1_minus = _bisect_increasing(rho, 0.0, s0m, rho_s0p)
    s1_plus = s0p
    s2_minus = s0m if model_type is ModelType.TYPE_I else _bisect_increasing(rho, 0.0, s0m, r_star)
    s2_plus = 1.0 if model_type is ModelType.TYPE_II else _bisect_increasing(rho, s0p, 1.0, r_star)
    return CriticalData(
        params=p,
        s0_minus=s0m,
        s0_plus=s0p,
        s1_minus=s1_minus,
        s1_plus=s1_plus,
        s2_minus=s2_minus,
        s2_plus=s2_plus,
        r_star=r_star,
        model_type=model_type,
    )
