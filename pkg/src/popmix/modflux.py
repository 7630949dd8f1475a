"""Monotone C^3 surrogate fluxes.

Every construction in the solver pipeline replaces rho by a surrogate rho*
that agrees with rho outside a density window, has a uniformly positive
derivative sigma* on [-1, 2], and (for the two-sided variant) sits strictly
below rho on the lower band and strictly above it on the upper band.

The surrogate is assembled in derivative space.  Inside the window sigma* is
a constant plateau theta joined to sigma at the window edges by quintic
smoothstep cutoffs, so sigma* is C^2 (hence rho* is C^3) and positivity is
structural rather than tuned.  The plateau level theta is fixed in closed
form by the integral constraint  int_a^b sigma* = rho(b) - rho(a),  which is
what makes rho* rejoin rho exactly at the far window edge.  All pieces are
plain polynomials, so the solver kernels can evaluate rho* and sigma* with a
single piecewise-Horner routine.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial import polynomial as P

from .branches import BranchTable, Side, invert_branch
from .flux import FluxParams, critical_points, eval_rho, eval_sigma, eval_sigma_prime

__all__ = [
    "ModifiedFlux",
    "MatchSide",
    "BuildError",
    "build_two_sided",
    "build_one_sided",
    "eval_modified",
]

DOMAIN = (-1.0, 2.0)


class BuildError(RuntimeError):
    """The monotone C^3 bridge could not satisfy a sampled constraint."""


def _rho_taylor(p: FluxParams, x0: float) -> np.ndarray:
    """Ascending coefficients of rho(x0 + y); exact since rho is cubic."""
    return np.array(
        [
            eval_rho(p, x0),
            eval_sigma(p, x0),
            0.5 * eval_sigma_prime(p, x0),
            p.alpha * p.beta,
        ]
    )


def _sigma_taylor(p: FluxParams, x0: float) -> np.ndarray:
    return np.array([eval_sigma(p, x0), eval_sigma_prime(p, x0), 3.0 * p.alpha * p.beta])


def _smoothstep(w: float, falling: bool) -> np.ndarray:
    """Quintic smoothstep in the local coordinate y in [0, w].

    Rising S has S(0)=0, S(w)=1 with first and second derivatives vanishing
    at both ends; falling is 1 - S.
    """
    s = np.array([0.0, 0.0, 0.0, 10.0 / w**3, -15.0 / w**4, 6.0 / w**5])
    if falling:
        s = -s
        s[0] += 1.0
    return s


@dataclass(frozen=True)
class ModifiedFlux:
    """Piecewise-polynomial surrogate flux on [-1, 2].

    knots are the segment breakpoints; coefs[i] holds ascending-power
    coefficients of rho* on [knots[i], knots[i+1]] in the local coordinate
    x - knots[i].  theta0/theta1 bound sigma* from below/above on the whole
    domain (sampled, with a 1% safety margin).
    """

    params: FluxParams
    kind: str  # "two_sided" | "one_sided_left" | "one_sided_right"
    window: tuple[float, float]
    knots: np.ndarray
    coefs: tuple[np.ndarray, ...]
    theta0: float
    theta1: float
    meta: dict

    def eval(self, s, order: int = 0):
        """rho* or its derivative of the given order (0..3)."""
        if order not in (0, 1, 2, 3):
            raise ValueError(f"derivative order must be in 0..3, got {order}")
        scalar = np.isscalar(s)
        x = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(x < DOMAIN[0] - 1e-12) or np.any(x > DOMAIN[1] + 1e-12):
            raise ValueError(f"evaluation outside domain [{DOMAIN[0]}, {DOMAIN[1]}]")
        idx = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, len(self.coefs) - 1)
        out = np.empty_like(x)
        for i, c in enumerate(self.coefs):
            m = idx == i
            if not np.any(m):
                continue
            out[m] = P.polyval(x[m] - self.knots[i], P.polyder(c, order) if order else c)
        return float(out[0]) if scalar else out

    def eval_diff(self, s):
        """rho*(s) - rho(s) evaluated through per-segment difference polynomials.

        Direct subtraction of the two evaluations loses all significant digits
        near the window edges (the difference vanishes to fourth order there);
        the difference polynomial keeps full relative precision, and is
        identically zero on the matched segments.
        """
        scalar = np.isscalar(s)
        x = np.atleast_1d(np.asarray(s, dtype=float))
        idx = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, len(self.coefs) - 1)
        out = np.empty_like(x)
        for i, c in enumerate(self.coefs):
            m = idx == i
            if not np.any(m):
                continue
            d = P.polysub(c, _rho_taylor(self.params, self.knots[i]))
            out[m] = P.polyval(x[m] - self.knots[i], d)
        return float(out[0]) if scalar else out

    def knot_derivative_limits(self, order: int) -> list[tuple[float, float, float]]:
        """(knot, left limit, right limit) of the order-th derivative at interior knots."""
        out = []
        for i in range(1, len(self.knots) - 1):
            k = self.knots[i]
            cl = P.polyder(self.coefs[i - 1], order) if order else self.coefs[i - 1]
            cr = P.polyder(self.coefs[i], order) if order else self.coefs[i]
            left = float(P.polyval(k - self.knots[i - 1], cl))
            right = float(P.polyval(0.0, cr))
            out.append((float(k), left, right))
        return out

    def coefficient_matrices(self, order: int = 0) -> np.ndarray:
        """Per-segment coefficients padded to equal length (for the kernels)."""
        ders = [P.polyder(c, order) if order else np.asarray(c) for c in self.coefs]
        width = max(len(c) for c in ders)
        out = np.zeros((len(ders), width))
        for i, c in enumerate(ders):
            out[i, : len(c)] = c
        return out

    def sigma_range(self, lo: float, hi: float, n: int = 2048) -> tuple[float, float]:
        """Sampled min/max of sigma* over [lo, hi]."""
        vals = self.eval(np.linspace(lo, hi, n), order=1)
        return float(np.min(vals)), float(np.max(vals))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.params.alpha,
            "beta": self.params.beta,
            "window": list(self.window),
            "knots": [float(v) for v in self.knots],
            "coefs": [[float(v) for v in c] for c in self.coefs],
            "theta0": self.theta0,
            "theta1": self.theta1,
            "meta": {k: (float(v) if isinstance(v, (int, float, np.floating)) else v) for k, v in self.meta.items()},
        }

    @staticmethod
    def from_dict(d: dict) -> "ModifiedFlux":
        return ModifiedFlux(
            params=FluxParams(d["alpha"], d["beta"]),
            kind=d["kind"],
            window=tuple(d["window"]),
            knots=np.asarray(d["knots"], dtype=float),
            coefs=tuple(np.asarray(c, dtype=float) for c in d["coefs"]),
            theta0=d["theta0"],
            theta1=d["theta1"],
            meta=dict(d["meta"]),
        )


def eval_modified(m: ModifiedFlux, s, derivative_order: int = 0):
    return m.eval(s, order=derivative_order)


def _anchored_rho_piece(c_sigma: np.ndarray, start_value: float | None = None,
                        end_value: float | None = None, width: float | None = None) -> np.ndarray:
    """Antiderivative of a sigma* piece with the constant fixed at one end.

    Anchoring window-edge segments at the exact rho value (rather than the
    value chained through earlier segments) keeps the contact with rho exact
    to the last bit, which the strict-ordering checks rely on.
    """
    c = P.polyint(c_sigma)
    if start_value is not None:
        c[0] = start_value
    else:
        c[0] = end_value - P.polyval(width, c)
    return c


def _assemble(p: FluxParams, kind: str, window, knots, coefs, meta) -> ModifiedFlux:
    """Wrap segments into a ModifiedFlux and attach sampled sigma* bounds."""
    m = ModifiedFlux(
        params=p,
        kind=kind,
        window=tuple(window),
        knots=np.asarray(knots, dtype=float),
        coefs=tuple(np.asarray(c, dtype=float) for c in coefs),
        theta0=np.nan,
        theta1=np.nan,
        meta=meta,
    )
    lo, hi = m.sigma_range(DOMAIN[0], DOMAIN[1], n=100_000)
    if lo <= 0.0:
        raise BuildError(f"sigma* not uniformly positive (sampled min {lo!r})")
    object.__setattr__(m, "theta0", 0.99 * lo)
    object.__setattr__(m, "theta1", 1.01 * hi)
    return m


def build_two_sided(p: FluxParams, r1: float, r2: float, table: BranchTable | None = None) -> ModifiedFlux:
    """Surrogate for the oscillation window [r1, r2].

    rho* = rho outside [s_minus(r1), s_plus(r2)], rho* < rho on the lower
    band (s_minus(r1), s_minus(r2)], rho* > rho on [s_plus(r1), s_plus(r2)),
    and theta0 <= (rho*)' <= theta1 with theta0 > 0.
    """
    table = table or BranchTable(p)
    c = table.crit
    slack = 1e-12 * (1.0 + c.r_star)
    if not (table.r_lo - slack <= r1 < r2 <= c.r_star + slack):
        raise ValueError(
            f"need rho(s0_plus) <= r1 < r2 <= r_star, got r1={r1!r}, r2={r2!r} "
            f"with range [{table.r_lo!r}, {c.r_star!r}]"
        )
    a = invert_branch(table, r1, Side.MINUS)
    b = invert_branch(table, r2, Side.PLUS)
    sm_r2 = invert_branch(table, r2, Side.MINUS)
    sp_r1 = invert_branch(table, r1, Side.PLUS)
    d_rho = eval_rho(p, b) - eval_rho(p, a)
    sig_a, sig_b = eval_sigma(p, a), eval_sigma(p, b)

    w_left = min(0.8 * (c.s0_minus - a), 0.7 * d_rho / sig_a)
    w_right = min(0.8 * (b - c.s0_plus), 0.7 * d_rho / sig_b)

    for _ in range(7):
        cut_l = _smoothstep(w_left, falling=True)
        cut_r = _smoothstep(w_right, falling=False)
        sig_l = _sigma_taylor(p, a)
        sig_r = _sigma_taylor(p, b - w_right)
        s_l = P.polyval(w_left, P.polyint(P.polymul(sig_l, cut_l)))
        s_r = P.polyval(w_right, P.polyint(P.polymul(sig_r, cut_r)))
        theta = (d_rho - s_l - s_r) / ((b - a) - 0.5 * w_left - 0.5 * w_right)
        if theta <= 0.0:
            w_left *= 0.5
            w_right *= 0.5
            continue

        knots = [DOMAIN[0], a, a + w_left, b - w_right, b, DOMAIN[1]]
        dive = _anchored_rho_piece(
            P.polyadd([theta], P.polymul(P.polysub(sig_l, [theta]), cut_l)), start_value=eval_rho(p, a)
        )
        plateau = _anchored_rho_piece(np.array([theta]), start_value=P.polyval(w_left, dive))
        rise = _anchored_rho_piece(
            P.polyadd([theta], P.polymul(P.polysub(sig_r, [theta]), cut_r)),
            end_value=eval_rho(p, b),
            width=w_right,
        )
        # residual of the integral constraint shows up as the (tiny) jump
        # between the plateau end and the rise start
        gap = abs(P.polyval((b - w_right) - (a + w_left), plateau) - rise[0])
        coefs = [_rho_taylor(p, DOMAIN[0]), dive, plateau, rise, _rho_taylor(p, b)]
        meta = {
            "r1": r1,
            "r2": r2,
            "s_minus_r1": a,
            "s_minus_r2": sm_r2,
            "s_plus_r1": sp_r1,
            "s_plus_r2": b,
            "w_left": w_left,
            "w_right": w_right,
            "theta_mid": theta,
            "closure_gap": gap,
        }
        try:
            m = _assemble(p, "two_sided", (a, b), knots, coefs, meta)
        except BuildError:
            w_left *= 0.5
            w_right *= 0.5
            continue
        if gap > 1e-11 * (1.0 + abs(eval_rho(p, b))):
            raise BuildError(f"integral constraint failed to close the window (gap {gap!r})")
        viol = _ordering_violation(m, p, a, sm_r2, sp_r1, b)
        if viol is None:
            return m
        w_left *= 0.5
        w_right *= 0.5
    raise BuildError(f"two-sided build failed after window shrinking; last violation: {viol}")


def _ordering_violation(m: ModifiedFlux, p: FluxParams, a, sm_r2, sp_r1, b, n: int = 4096):
    """Check rho* < rho on (a, sm_r2] and rho* > rho on [sp_r1, b); None if ok.

    Uses the cancellation-free difference polynomials: near the window edges
    the separation is quartic in the distance, far below the noise of
    subtracting two direct evaluations.
    """
    lo_band = np.linspace(a, sm_r2, n + 1)[1:]
    if not np.all(m.eval_diff(lo_band) < 0.0):
        return "rho* < rho violated on the lower band"
    hi_band = np.linspace(sp_r1, b, n + 1)[:-1]
    if not np.all(m.eval_diff(hi_band) > 0.0):
        return "rho* > rho violated on the upper band"
    return None


class MatchSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"


def build_one_sided(p: FluxParams, match_upto: float, side: MatchSide | str) -> ModifiedFlux:
    """Surrogate matching rho on one side of the backward interval.

    Left: rho* = rho on [-1, match_upto] with match_upto < s0_minus, then a
    uniformly increasing extension up to 2.  Right: mirrored, rho* = rho on
    [match_upto, 2] with match_upto > s0_plus.
    """
    c = critical_points(p)
    side = MatchSide(side)
    if side is MatchSide.LEFT:
        if not (DOMAIN[0] < match_upto < c.s0_minus):
            raise ValueError(f"left match point must lie in (-1, s0_minus={c.s0_minus!r}), got {match_upto!r}")
        w = 0.8 * (c.s0_minus - match_upto)
        theta = 0.9 * eval_sigma(p, match_upto + w)
        knots = [DOMAIN[0], match_upto, match_upto + w, DOMAIN[1]]
        dive = _anchored_rho_piece(
            P.polyadd([theta], P.polymul(P.polysub(_sigma_taylor(p, match_upto), [theta]), _smoothstep(w, falling=True))),
            start_value=eval_rho(p, match_upto),
        )
        tail = _anchored_rho_piece(np.array([theta]), start_value=P.polyval(w, dive))
        coefs = [_rho_taylor(p, DOMAIN[0]), dive, tail]
        window = (match_upto, DOMAIN[1])
    else:
        if not (c.s0_plus < match_upto < DOMAIN[1]):
            raise ValueError(f"right match point must lie in (s0_plus={c.s0_plus!r}, 2), got {match_upto!r}")
        w = 0.8 * (match_upto - c.s0_plus)
        theta = 0.9 * eval_sigma(p, match_upto - w)
        knots = [DOMAIN[0], match_upto - w, match_upto, DOMAIN[1]]
        rise = _anchored_rho_piece(
            P.polyadd([theta], P.polymul(P.polysub(_sigma_taylor(p, match_upto - w), [theta]), _smoothstep(w, falling=False))),
            end_value=eval_rho(p, match_upto),
            width=w,
        )
        head = _anchored_rho_piece(
            np.array([theta]), end_value=rise[0], width=(match_upto - w) - DOMAIN[0]
        )
        coefs = [head, rise, _rho_taylor(p, match_upto)]
        window = (DOMAIN[0], match_upto)
    meta = {"match_upto": match_upto, "w_blend": w, "theta_mid": theta}
    return _assemble(p, f"one_sided_{side.value}", window, knots, coefs, meta)
