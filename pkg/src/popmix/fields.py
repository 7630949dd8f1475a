"""Grids, space-time fields, and initial-density descriptors.

Fields live on a uniform finite-volume grid over the habitat (0, L): values
are cell averages at centers x_i = (i + 1/2) h.  Time is a strictly
increasing sequence of stored sample times; values is a (n_times, N) array.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Grid", "SpaceTimeField", "InitialData"]


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid on (0, L) with N cells."""

    L: float
    N: int

    def __post_init__(self):
        if self.N < 16:
            raise ValueError(f"need at least 16 cells, got {self.N}")
        if not self.L > 0.0:
            raise ValueError("habitat length must be positive")

    @property
    def h(self) -> float:
        return self.L / self.N

    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    def faces(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def refine(self, ratio: int) -> "Grid":
        g = Grid.__new__(Grid)
        object.__setattr__(g, "L", self.L)
        object.__setattr__(g, "N", self.N * ratio)
        return g


@dataclass
class SpaceTimeField:
    """Scalar field sampled at stored times on a Grid."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    density: bool = True  # enforce values in [0,1] (with fp slack)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape != (len(self.times), self.grid.N):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"(n_times={len(self.times)}, N={self.grid.N})"
            )
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0.0):
            raise ValueError("stored times must be strictly increasing")
        if self.density:
            lo, hi = self.values.min(), self.values.max()
            if lo < -1e-9 or hi > 1.0 + 1e-9:
                raise ValueError(f"density values outside [0,1]: range [{lo}, {hi}]")

    @property
    def n_times(self) -> int:
        return len(self.times)

    def slice_at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * (1.0 + abs(t)):
            raise KeyError(f"time {t} not stored (closest {self.times[i]})")
        return self.values[i]

    def mass_trace(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.h

    def restrict_times(self, t_lo: float, t_hi: float) -> "SpaceTimeField":
        m = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        return SpaceTimeField(self.grid, self.times[m], self.values[m], density=self.density)

    def to_csv(self, path) -> None:
        """Write rows t,x,u with full round-trip precision."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            xs = self.grid.centers()
            for t, row in zip(self.times, self.values):
                for x, u in zip(xs, row):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(u))])

    @staticmethod
    def from_csv(path, L: float | None = None, density: bool = True) -> "SpaceTimeField":
        """Rebuild a field from a t,x,u dump (uniform grid assumed)."""
        with open(path, newline="") as fh:
            rdr = csv.reader(fh)
            header = next(rdr)
            if header[:3] != ["t", "x", "u"]:
                raise ValueError(f"unexpected CSV header {header}")
            ts, xs, us = [], [], []
            for row in rdr:
                ts.append(float(row[0]))
                xs.append(float(row[1]))
                us.append(float(row[2]))
        times = np.unique(ts)
        x = np.unique(xs)
        n = len(x)
        h = x[1] - x[0]
        if L is None:
            L = float(n * h)
        vals = np.asarray(us, dtype=float).reshape(len(times), n)
        return SpaceTimeField(Grid(L, n), times, vals, density=density)


def _cos_bump(y: np.ndarray) -> np.ndarray:
    """Compactly supported C^2 bump profile on |y| <= 1/2, peak 1 at y = 0."""
    out = np.zeros_like(y)
    m = np.abs(y) < 0.5
    out[m] = ((1.0 + np.cos(2.0 * np.pi * y[m])) / 2.0) ** 2
    return out


@dataclass(frozen=True)
class InitialData:
    """Analytic descriptor of an initial density with exact boundary slopes.

    kinds:
      constant: value
      cosine:   base + amp*cos(mode*pi*x/L)
      bump:     level + (peak-level)*B((x-center)/width); level is solved per
                grid so the discrete mean equals params["mean"] exactly
      array:    verbatim cell values
    """

    kind: str
    params: dict = field(default_factory=dict)

    def sample(self, grid: Grid) -> np.ndarray:
        x = grid.centers()
        p = self.params
        if self.kind == "constant":
            return np.full(grid.N, float(p["value"]))
        if self.kind == "cosine":
            return p["base"] + p["amp"] * np.cos(p.get("mode", 1) * np.pi * x / grid.L)
        if self.kind == "bump":
            b = _cos_bump((x - p["center"]) / p["width"])
            bbar = float(b.mean())
            if "mean" in p:
                level = (p["mean"] - p["peak"] * bbar) / (1.0 - bbar)
            else:
                level = p["level"]
            return level + (p["peak"] - level) * b
        if self.kind == "array":
            vals = np.asarray(p["values"], dtype=float)
            if len(vals) != grid.N:
                raise ValueError(f"array datum has {len(vals)} cells, grid wants {grid.N}")
            return vals
        raise ValueError(f"unknown initial-data kind {self.kind!r}")

    def boundary_slopes(self, grid: Grid) -> tuple[float, float]:
        """Exact u0'(0), u0'(L) for analytic kinds; discrete slopes for arrays."""
        p = self.params
        if self.kind == "constant":
            return 0.0, 0.0
        if self.kind == "cosine":
            k = p.get("mode", 1)
            amp = p["amp"]
            return 0.0, -amp * k * np.pi / grid.L * math.sin(k * np.pi)
        if self.kind == "bump":
            lo = p["center"] - 0.5 * p["width"]
            hi = p["center"] + 0.5 * p["width"]
            d0 = 0.0 if (lo > 0.0 or hi < 0.0) else np.nan
            dL = 0.0 if (lo > grid.L or hi < grid.L) else np.nan
            return d0, dL
        vals = self.sample(grid)
        return (vals[1] - vals[0]) / grid.h, (vals[-1] - vals[-2]) / grid.h

    def to_dict(self) -> dict:
        p = {k: (v if isinstance(v, (int, float, str)) else [float(a) for a in v]) for k, v in self.params.items()}
        return {"kind": self.kind, "params": p}
