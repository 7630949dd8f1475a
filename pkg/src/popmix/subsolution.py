"""Strict subsolutions of the two-wall inclusion built from a solver run.

Given the regularized evolution u*, the pair z* = (v*, w*) with
    v*(x,t) = integral_0^x u*(y,t) dy
    w*(x,t) = integral_0^t rho*(u*(x,s)) ds + integral_0^x v0(y) dy
satisfies w*_x = v* and w*_t = rho*(v*_x).  Under zero-flux boundaries the
boundary-derivative correction in v* vanishes, so the cumulative face sums
of the cell averages are the exact discrete integral.

The oscillation region Q collects the cells where s_minus(r1) < v*_x <
s_plus(r2) strictly; on Q a valid strict subsolution keeps (v*_x, w*_t)
inside the open region U between the two walls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .branches import BranchTable, Side, invert_branch
from .fields import Grid, SpaceTimeField
from .modflux import ModifiedFlux

__all__ = ["WallSpec", "SubsolutionFields", "QInfo", "SubsolutionReport",
           "build_subsolution", "compute_Q", "check_strict_subsolution"]


@dataclass(frozen=True)
class WallSpec:
    """Flux window [r1, r2] with the two branch-inverse walls restricted to it."""

    table: BranchTable
    r1: float
    r2: float

    def __post_init__(self):
        slack = 1e-12 * (1.0 + self.table.r_hi)
        if not (self.table.r_lo - slack <= self.r1 < self.r2 <= self.table.r_hi + slack):
            raise ValueError(
                f"wall window [{self.r1!r}, {self.r2!r}] must sit inside "
                f"[{self.table.r_lo!r}, {self.table.r_hi!r}] with r1 < r2"
            )
        if not self.max_omega1 < self.min_omega2:
            raise ValueError("walls overlap: max omega1 >= min omega2")

    def omega1(self, r):
        return invert_branch(self.table, r, Side.MINUS)

    def omega2(self, r):
        return invert_branch(self.table, r, Side.PLUS)

    @property
    def max_omega1(self) -> float:
        return self.omega1(self.r2)

    @property
    def min_omega2(self) -> float:
        return self.omega2(self.r1)

    @property
    def d0(self) -> float:
        """Oscillation floor: min omega2 - max omega1 > 0."""
        return self.min_omega2 - self.max_omega1

    def bands(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Lower and upper density bands hit by wall values on [r1, r2]."""
        return (self.omega1(self.r1), self.omega1(self.r2)), (self.omega2(self.r1), self.omega2(self.r2))

    def to_dict(self) -> dict:
        lo, hi = self.bands()
        return {"r1": self.r1, "r2": self.r2, "d0": self.d0,
                "band_minus": list(lo), "band_plus": list(hi)}


class SubsolutionFields:
    """z* = (v*, w*) on the solver grid, kept consistent with u* by construction.

    v*_x is the cell average u* itself (never re-differenced); w*_t is
    rho*(u*) cellwise.  v* lives on faces (exact cumulative sums), w* on
    centers.
    """

    def __init__(self, u_star: SpaceTimeField, mflux: ModifiedFlux):
        self.grid: Grid = u_star.grid
        self.times = u_star.times
        self.u = u_star.values
        self.mflux = mflux
        h = self.grid.h
        self.v_faces = np.concatenate(
            [np.zeros((len(self.times), 1)), np.cumsum(self.u, axis=1) * h], axis=1
        )
        rho_star = mflux.eval(self.u.reshape(-1)).reshape(self.u.shape)
        dt = np.diff(self.times)
        self.ti = np.zeros_like(self.u)
        if len(self.times) > 1:
            incr = 0.5 * (rho_star[1:] + rho_star[:-1]) * dt[:, None]
            self.ti[1:] = np.cumsum(incr, axis=0)
        self._rho_star = rho_star
        # second antiderivative of u0: exact for the piecewise-affine v0
        u0 = self.u[0]
        vf0 = self.v_faces[0]
        self._u0 = u0
        self._vf0 = vf0
        cell = vf0[:-1] * h + 0.5 * u0 * h * h
        self._w0_faces = np.concatenate([[0.0], np.cumsum(cell)])
        self._w0_centers = self._w0_faces[:-1] + vf0[:-1] * (h / 2) + 0.5 * u0 * (h / 2) ** 2
        self.w = self.ti + self._w0_centers[None, :]

    @property
    def v_centers(self) -> np.ndarray:
        return 0.5 * (self.v_faces[:, :-1] + self.v_faces[:, 1:])

    def w_t(self) -> np.ndarray:
        """Cellwise w*_t = rho*(v*_x)."""
        return self._rho_star

    def v_star_at(self, x: np.ndarray, row: int) -> np.ndarray:
        """Exact piecewise-affine v* at arbitrary positions."""
        h = self.grid.h
        i = np.clip((x / h).astype(int), 0, self.grid.N - 1)
        return self.v_faces[row, i] + self.u[row, i] * (x - i * h)

    def w0_at(self, x: np.ndarray) -> np.ndarray:
        """Exact piecewise-quadratic integral of v0 at arbitrary positions."""
        h = self.grid.h
        i = np.clip((x / h).astype(int), 0, self.grid.N - 1)
        xi = x - i * h
        return self._w0_faces[i] + self._vf0[i] * xi + 0.5 * self._u0[i] * xi * xi

    def u_field(self) -> SpaceTimeField:
        return SpaceTimeField(self.grid, self.times, self.u, density=True)


def build_subsolution(u_star: SpaceTimeField, mflux: ModifiedFlux) -> SubsolutionFields:
    return SubsolutionFields(u_star, mflux)


@dataclass
class QInfo:
    """Cellwise oscillation region with a connected-component summary."""

    mask: np.ndarray
    margin: np.ndarray
    n_components: int
    bboxes: list
    touches_t0: bool
    full_rows: np.ndarray
    t_extent: tuple[float, float] | None

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def to_dict(self) -> dict:
        return {
            "n_cells": self.n_cells,
            "n_components": self.n_components,
            "bounding_boxes": self.bboxes,
            "touches_t0": self.touches_t0,
            "n_full_rows": int(len(self.full_rows)),
            "t_extent": list(self.t_extent) if self.t_extent else None,
        }


def compute_Q(f: SubsolutionFields, wall: WallSpec) -> QInfo:
    """Strict-inequality mask s_minus(r1) < u* < s_plus(r2), with summary.

    Strictness is at machine precision (no tolerance band); margin records
    each cell's distance to the nearer threshold so borderline cells are
    visible.
    """
    lo = wall.omega1(wall.r1)
    hi = wall.omega2(wall.r2)
    mask = (f.u > lo) & (f.u < hi)
    margin = np.minimum(f.u - lo, hi - f.u)
    labels, n_comp = ndimage.label(mask)
    bboxes = []
    for sl_t, sl_x in ndimage.find_objects(labels):
        bboxes.append(
            {
                "t": [float(f.times[sl_t.start]), float(f.times[sl_t.stop - 1])],
                "x": [float(sl_x.start * f.grid.h), float(sl_x.stop * f.grid.h)],
            }
        )
    rows = mask.any(axis=1)
    t_extent = None
    if rows.any():
        idx = np.where(rows)[0]
        t_extent = (float(f.times[idx[0]]), float(f.times[idx[-1]]))
    return QInfo(
        mask=mask,
        margin=margin,
        n_components=int(n_comp),
        bboxes=bboxes,
        touches_t0=bool(mask[0].any()),
        full_rows=np.where(mask.all(axis=1))[0],
        t_extent=t_extent,
    )


@dataclass
class SubsolutionReport:
    passed: bool
    n_checked: int
    first_offender: tuple | None
    min_wt_margin: float
    min_wall_margin: float
    min_boundary_distance: float
    wx_residual: float
    wx_tolerance: float
    wt_residual: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_checked": self.n_checked,
            "first_offender": list(self.first_offender) if self.first_offender else None,
            "min_wt_margin": self.min_wt_margin,
            "min_wall_margin": self.min_wall_margin,
            "min_boundary_distance": self.min_boundary_distance,
            "wx_residual": self.wx_residual,
            "wx_tolerance": self.wx_tolerance,
            "wt_residual": self.wt_residual,
        }


def check_strict_subsolution(
    f: SubsolutionFields, wall: WallSpec, q: QInfo | None = None, wx_tol: float | None = None
) -> SubsolutionReport:
    """Verify the strict subsolution conditions on every cell of Q.

    Checks r1 < w*_t < r2, omega1(w*_t) < v*_x < omega2(w*_t), and the
    discrete consistency w*_x = v*.  The minimum distance of (v*_x, w*_t)
    to the boundary of the open region U is reported coordinate-wise; a
    vanishing-distance certificate is not obtainable on a grid, so the
    measured minimum stands in for the approach condition.
    """
    q = q or compute_Q(f, wall)
    mask = q.mask
    n_checked = int(mask.sum())
    wt = f.w_t()
    u = f.u
    if n_checked == 0:
        wx_res, wx_tolv = _wx_residual(f)
        return SubsolutionReport(True, 0, None, np.inf, np.inf, np.inf, wx_res, wx_tolv, 0.0)

    wt_q = wt[mask]
    u_q = u[mask]
    m_r = np.minimum(wt_q - wall.r1, wall.r2 - wt_q)
    wt_clip = np.clip(wt_q, max(wall.r1, wall.table.r_lo), min(wall.r2, wall.table.r_hi))
    w1 = invert_branch(wall.table, wt_clip, Side.MINUS)
    w2 = invert_branch(wall.table, wt_clip, Side.PLUS)
    m_s = np.minimum(u_q - w1, w2 - u_q)
    ok = (m_r > 0.0) & (m_s > 0.0)
    first = None
    if not ok.all():
        flat = np.where(mask.reshape(-1))[0][np.argmin(np.minimum(m_r, m_s))]
        row, col = np.unravel_index(flat, mask.shape)
        first = (float(f.times[row]), float(f.grid.centers()[col]))
    wx_res, wx_tolv = _wx_residual(f, mask)
    if wx_tol is not None:
        wx_tolv = wx_tol
    passed = bool(ok.all()) and wx_res <= wx_tolv
    return SubsolutionReport(
        passed=passed,
        n_checked=n_checked,
        first_offender=first,
        min_wt_margin=float(m_r.min()),
        min_wall_margin=float(m_s.min()),
        min_boundary_distance=float(min(m_r.min(), m_s.min())),
        wx_residual=wx_res,
        wx_tolerance=wx_tolv,
        wt_residual=0.0,  # w*_t is rho*(v*_x) by definition, never re-differenced
    )


def _wx_residual(f: SubsolutionFields, mask: np.ndarray | None = None) -> tuple[float, float]:
    """Centered-difference w*_x against v* at interior cells, with tolerance.

    The grid-aware tolerance 5 h^2 max|u*| dominates the nominal
    1e-6 (1 + max|v*|) whenever the datum has curvature the coarse grid can
    barely represent.
    """
    h = f.grid.h
    wx = (f.w[:, 2:] - f.w[:, :-2]) / (2.0 * h)
    res = np.abs(wx - f.v_centers[:, 1:-1])
    if mask is not None:
        inner = mask[:, 1:-1]
        res = res[inner] if inner.any() else res
    tol = max(1e-6 * (1.0 + float(np.max(np.abs(f.v_centers)))), 5.0 * h * h * float(np.max(np.abs(f.u))))
    return float(res.max()) if res.size else 0.0, tol
