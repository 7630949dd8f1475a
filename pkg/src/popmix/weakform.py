"""Weak-form residuals against a separable test-function catalog.

A bounded density u is a weak solution when

    int_0^T int_0^L (u phi_t + rho(u) phi_xx) dx dt + int_0^L u0 phi(.,0) dx

vanishes for every smooth phi with phi(.,T) = 0 and phi_x = 0 on the
boundary.  The catalog uses phi = cos(k pi x / L) * Theta(t) with polynomial
or sine time ramps vanishing at T: the cosines satisfy the boundary
constraint exactly, and low modes are where laminate defects concentrate.
The k = 0 member degenerates to the mass identity, so its residual is the
conservation error exactly.

Quadrature: midpoint in x (exact for the cell-average fields) and trapezoid
in t over the stored rows; all candidates being compared use the same rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import SpaceTimeField

__all__ = ["TestFunction", "catalog", "weak_residual", "residual_catalog",
           "segment_residual", "corrupt_field"]

PROFILES = ("ramp1", "ramp2", "ramp3", "sinq")


@dataclass(frozen=True)
class TestFunction:
    """phi(x,t) = cos(k pi x / L) * Theta(1 - t/T variants), Theta(T) = 0."""

    k: int
    profile: str
    T: float
    L: float

    def x_part(self, x: np.ndarray) -> np.ndarray:
        return np.cos(self.k * np.pi * x / self.L)

    def x_part_xx(self, x: np.ndarray) -> np.ndarray:
        return -((self.k * np.pi / self.L) ** 2) * self.x_part(x)

    def theta(self, t: np.ndarray) -> np.ndarray:
        s = 1.0 - np.asarray(t, dtype=float) / self.T
        if self.profile == "ramp1":
            return s
        if self.profile == "ramp2":
            return s**2
        if self.profile == "ramp3":
            return s**3
        if self.profile == "sinq":
            return np.sin(0.5 * np.pi * s)
        raise ValueError(f"unknown profile {self.profile!r}")

    def theta_t(self, t: np.ndarray) -> np.ndarray:
        s = 1.0 - np.asarray(t, dtype=float) / self.T
        if self.profile == "ramp1":
            return np.full_like(s, -1.0 / self.T)
        if self.profile == "ramp2":
            return -2.0 * s / self.T
        if self.profile == "ramp3":
            return -3.0 * s**2 / self.T
        if self.profile == "sinq":
            return -0.5 * np.pi / self.T * np.cos(0.5 * np.pi * s)
        raise ValueError(f"unknown profile {self.profile!r}")

    @property
    def name(self) -> str:
        return f"k{self.k}_{self.profile}"


def catalog(L: float, T: float, modes: int = 8, profiles=PROFILES) -> list[TestFunction]:
    """Cosine modes k = 0..modes crossed with the time profiles."""
    return [TestFunction(k, pr, T, L) for k in range(modes + 1) for pr in profiles]


def _row_mask_to_horizon(times: np.ndarray, T: float) -> np.ndarray:
    if times[0] > 1e-12 or times[-1] < T - 1e-9 * (1.0 + T):
        raise ValueError(f"field stores [{times[0]}, {times[-1]}], cannot integrate to T={T}")
    m = times <= T + 1e-9 * (1.0 + T)
    if abs(times[m][-1] - T) > 1e-9 * (1.0 + T):
        raise ValueError(f"no stored row at the horizon T={T} (closest {times[m][-1]})")
    return m


def _moments(field: SpaceTimeField, rho, modes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Midpoint-rule x-moments h*sum(u*X_k) and h*sum(rho(u)*X_k) per row."""
    x = field.grid.centers()
    h = field.grid.h
    ks = np.arange(modes + 1)
    xmat = np.cos(np.outer(ks, np.pi * x / field.grid.L))  # (K+1, N)
    mu = field.values @ xmat.T * h  # (n_t, K+1)
    mr = rho(field.values) @ xmat.T * h
    return mu, mr, xmat


def residual_catalog(
    field: SpaceTimeField,
    u0: np.ndarray,
    T: float,
    rho,
    modes: int = 8,
    profiles=PROFILES,
) -> dict:
    """All catalog residuals at horizon T; returns per-function values + worst."""
    m = _row_mask_to_horizon(field.times, T)
    times = field.times[m]
    sub = SpaceTimeField(field.grid, times, field.values[m], density=False)
    mu, mr, xmat = _moments(sub, rho, modes)
    h = field.grid.h
    u0_mom = (u0 @ xmat.T) * h  # phi(.,0) moments, Theta(0) = 1 for all profiles
    out = {}
    worst = 0.0
    for k in range(modes + 1):
        lap = -((k * np.pi / field.grid.L) ** 2)
        for pr in profiles:
            tf = TestFunction(k, pr, T, field.grid.L)
            integrand = mu[:, k] * tf.theta_t(times) + mr[:, k] * lap * tf.theta(times)
            r = float(np.trapz(integrand, times) + u0_mom[k])
            out[tf.name] = r
            worst = max(worst, abs(r))
    return {"residuals": out, "worst": worst, "modes": modes, "profiles": list(profiles), "T": T}


def weak_residual(field: SpaceTimeField, u0: np.ndarray, tf: TestFunction, rho) -> float:
    """Single test-function residual (same quadrature as the catalog)."""
    rep = residual_catalog(field, u0, tf.T, rho, modes=tf.k, profiles=(tf.profile,))
    return rep["residuals"][tf.name]


def segment_residual(
    field: SpaceTimeField,
    tf: TestFunction,
    t_lo: float,
    t_hi: float,
    bottom: np.ndarray,
    top: np.ndarray,
    rho,
) -> float:
    """Residual of one time segment with explicit end slices.

    For a classical piece this telescopes to zero:
        int int (u phi_t + rho(u) phi_xx) + int bottom phi(.,t_lo)
                                          - int top phi(.,t_hi) = 0,
    which is the additivity used to glue epochs.
    """
    m = (field.times >= t_lo - 1e-9) & (field.times <= t_hi + 1e-9)
    times = field.times[m]
    if abs(times[0] - t_lo) > 1e-9 or abs(times[-1] - t_hi) > 1e-9:
        raise ValueError(f"segment [{t_lo}, {t_hi}] not aligned with stored rows")
    x = field.grid.centers()
    h = field.grid.h
    xv = tf.x_part(x)
    xxv = tf.x_part_xx(x)
    vals = field.values[m]
    integrand = (vals @ xv) * h * tf.theta_t(times) + (rho(vals) @ xxv) * h * tf.theta(times)
    r = np.trapz(integrand, times)
    r += float(bottom @ xv) * h * float(tf.theta(t_lo))
    r -= float(top @ xv) * h * float(tf.theta(t_hi))
    return float(r)


def corrupt_field(field: SpaceTimeField, amount: float = 0.01,
                  x_frac=(0.25, 0.5), t_frac=(1.0 / 3.0, 2.0 / 3.0)) -> SpaceTimeField:
    """Additive perturbation on a space-time subregion (sensitivity probe)."""
    vals = field.values.copy()
    x = field.grid.centers()
    t = field.times
    xm = (x >= x_frac[0] * field.grid.L) & (x <= x_frac[1] * field.grid.L)
    tm = (t >= t_frac[0] * t[-1]) & (t <= t_frac[1] * t[-1])
    vals[np.ix_(tm, xm)] += amount
    return SpaceTimeField(field.grid, t, np.clip(vals, 0.0, 1.0), density=True)
