"""Pure-numpy stepping kernels (fallback backend).

Same contract as the compiled kernels in _step_kernel.pyx: advance a
cell-average density under u_t = (rho*(u))_xx with zero-flux faces, where
rho* and sigma* are piecewise polynomials (knots + per-segment ascending
coefficients in the local coordinate).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded

BACKEND_NAME = "python"


def ppoly_eval(x: np.ndarray, knots: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    """Evaluate a piecewise polynomial at x (clamped to the outer segments)."""
    idx = np.clip(np.searchsorted(knots[1:-1], x, side="right"), 0, coefs.shape[0] - 1)
    y = x - knots[idx]
    out = np.zeros_like(x)
    c = coefs[idx]
    for k in range(coefs.shape[1] - 1, -1, -1):
        out = out * y + c[:, k]
    return out


def _neumann_laplacian(p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)
    out[1:-1] = p[:-2] - 2.0 * p[1:-1] + p[2:]
    out[0] = p[1] - p[0]
    out[-1] = p[-2] - p[-1]
    return out


def advance_implicit(
    u: np.ndarray,
    n_steps: int,
    dt: float,
    h: float,
    knots: np.ndarray,
    rho_c: np.ndarray,
    sig_c: np.ndarray,
    tol: float,
    max_newton: int,
    mass_ref: float,
) -> dict:
    """Backward-Euler steps with damped Newton; mutates u in place.

    After each accepted step the cell sum is projected back to mass_ref by a
    uniform shift (magnitude bounded by the Newton tolerance), which keeps
    the conserved total exact to round-off over arbitrarily many steps.
    """
    lam = dt / (h * h)
    n = u.shape[0]
    diag_c = np.full(n, 2.0)
    diag_c[0] = diag_c[-1] = 1.0
    newton_total = 0
    max_resid = 0.0
    max_shift = 0.0
    ab = np.zeros((3, n))
    for step in range(n_steps):
        u_old = u.copy()

        def resid(v: np.ndarray) -> np.ndarray:
            return v - u_old - lam * _neumann_laplacian(ppoly_eval(v, knots, rho_c))

        f = resid(u)
        fn = np.max(np.abs(f))
        for it in range(max_newton):
            if fn <= tol:
                break
            fn_prev = fn
            sig = ppoly_eval(u, knots, sig_c)
            ab[0, 1:] = -lam * sig[1:]
            ab[1, :] = 1.0 + lam * diag_c * sig
            ab[2, :-1] = -lam * sig[:-1]
            delta = solve_banded((1, 1), ab, f)
            scale = 1.0
            for _ in range(25):
                trial = u - scale * delta
                f_try = resid(trial)
                fn_try = np.max(np.abs(f_try))
                if fn_try < fn:
                    u[:] = trial
                    f, fn = f_try, fn_try
                    break
                scale *= 0.5
            else:
                break  # stalled; accept current iterate
            newton_total += 1
            if fn > 0.5 * fn_prev:
                break  # at the rounding floor; further iterations cannot help
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite state at step {step}")
        if fn > max_resid:
            max_resid = fn
        shift = (mass_ref - math.fsum(u)) / n
        u += shift
        if abs(shift) > max_shift:
            max_shift = abs(shift)
    return {"newton_total": newton_total, "max_residual": max_resid, "max_shift": max_shift}


def advance_explicit(
    u: np.ndarray,
    n_steps: int,
    dt: float,
    h: float,
    knots: np.ndarray,
    rho_c: np.ndarray,
    sig_c: np.ndarray,
    mass_ref: float,
) -> dict:
    """Forward-Euler steps (caller is responsible for the CFL bound)."""
    lam = dt / (h * h)
    n = u.shape[0]
    max_shift = 0.0
    for step in range(n_steps):
        u += lam * _neumann_laplacian(ppoly_eval(u, knots, rho_c))
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite state at step {step}")
        shift = (mass_ref - math.fsum(u)) / n
        u += shift
        if abs(shift) > max_shift:
            max_shift = abs(shift)
    return {"newton_total": 0, "max_residual": 0.0, "max_shift": max_shift}
