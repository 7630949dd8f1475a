"""Inverses of rho on its two outer monotone branches.

For r in [rho(s0_plus), r_star] there is exactly one preimage on each outer
branch: s_minus(r) in (0, s0_minus] and s_plus(r) in [s0_plus, 1].  The middle
(backward) branch is never inverted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .flux import CriticalData, FluxParams, critical_points, eval_rho, eval_sigma

__all__ = ["Side", "BranchTable", "BranchRangeError", "invert_branch", "branch_endpoints"]


class Side(str, Enum):
    MINUS = "minus"
    PLUS = "plus"


class BranchRangeError(ValueError):
    """Requested flux level lies outside [rho(s0_plus), r_star]."""


@dataclass(frozen=True)
class BranchTable:
    """Branch-inversion context: parameters, critical data, target tolerance."""

    params: FluxParams
    crit: CriticalData | None = None
    tol: float = 1e-12

    def __post_init__(self):
        if self.crit is None:
            object.__setattr__(self, "crit", critical_points(self.params))

    @property
    def r_lo(self) -> float:
        return self.crit.rho_s0_plus

    @property
    def r_hi(self) -> float:
        return self.crit.r_star


def _newton_bisect(p: FluxParams, r: np.ndarray, lo: float, hi: float, tol: float) -> np.ndarray:
    """Vectorized bracketed root solve of rho(s) = r on an increasing branch.

    Bisection narrows the bracket; a Newton step replaces the midpoint
    whenever the current iterate stays in-bracket and |sigma| >= 1e-3
    (sigma vanishes at the branch endpoint, where Newton degrades).
    """
    lo_a = np.full_like(r, lo)
    hi_a = np.full_like(r, hi)
    s = 0.5 * (lo_a + hi_a)
    for _ in range(90):
        f = eval_rho(p, s) - r
        below = f <= 0.0
        lo_a = np.where(below, s, lo_a)
        hi_a = np.where(below, hi_a, s)
        width = hi_a - lo_a
        if np.all(width <= tol):
            break
        sig = eval_sigma(p, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_newton = s - f / sig
        ok = (np.abs(sig) >= 1e-3) & (s_newton > lo_a) & (s_newton < hi_a)
        s = np.where(ok, s_newton, 0.5 * (lo_a + hi_a))
    return 0.5 * (lo_a + hi_a)


def invert_branch(table: BranchTable, r, side: Side):
    """Density s with rho(s) = r on the requested outer branch.

    Accepts scalars or arrays.  Results within table.tol of a branch endpoint
    (s0_minus, s0_plus, or 1) are snapped exactly so downstream band
    membership can use closed intervals.
    """
    scalar = np.isscalar(r)
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    c = table.crit
    slack = 1e-13 * (1.0 + abs(c.r_star))
    if np.any(r_arr < table.r_lo - slack) or np.any(r_arr > table.r_hi + slack):
        bad = r_arr[(r_arr < table.r_lo - slack) | (r_arr > table.r_hi + slack)][0]
        raise BranchRangeError(
            f"flux level {bad!r} outside the invertible range [{table.r_lo!r}, {table.r_hi!r}]"
        )
    r_arr = np.clip(r_arr, table.r_lo, table.r_hi)
    side = Side(side)
    if side is Side.MINUS:
        s = _newton_bisect(table.params, r_arr, 0.0, c.s0_minus, table.tol)
        s[np.abs(s - c.s0_minus) <= table.tol] = c.s0_minus
    else:
        s = _newton_bisect(table.params, r_arr, c.s0_plus, 1.0, table.tol)
        s[np.abs(s - c.s0_plus) <= table.tol] = c.s0_plus
        s[np.abs(s - 1.0) <= table.tol] = 1.0
    return float(s[0]) if scalar else s


def branch_endpoints(table: BranchTable) -> tuple[float, float, float, float]:
    """(s1_minus, s1_plus, s2_minus, s2_plus) recomputed through invert_branch."""
    s1m = invert_branch(table, table.r_lo, Side.MINUS)
    s1p = invert_branch(table, table.r_lo, Side.PLUS)
    s2m = invert_branch(table, table.r_hi, Side.MINUS)
    s2p = invert_branch(table, table.r_hi, Side.PLUS)
    return s1m, s1p, s2m, s2p
