# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled stepping kernels (hot path of the parabolic solver).

Mirrors _kernels_py: backward/forward Euler steps for u_t = (rho*(u))_xx
with zero-flux faces, rho*/sigma* given as piecewise polynomials.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


cdef inline double _ppoly_scalar(double x, double[::1] knots, double[:, ::1] coefs) noexcept nogil:
    cdef Py_ssize_t nseg = coefs.shape[0]
    cdef Py_ssize_t width = coefs.shape[1]
    cdef Py_ssize_t i = 0
    # segments are few (<= 6): linear scan beats bisection here
    while i < nseg - 1 and x >= knots[i + 1]:
        i += 1
    cdef double y = x - knots[i]
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(width - 1, -1, -1):
        acc = acc * y + coefs[i, k]
    return acc


def ppoly_eval(cnp.ndarray[cnp.float64_t, ndim=1] x, cnp.ndarray[cnp.float64_t, ndim=1] knots,
               cnp.ndarray[cnp.float64_t, ndim=2] coefs):
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x)
    cdef double[::1] kv = np.ascontiguousarray(knots)
    cdef double[:, ::1] cv = np.ascontiguousarray(coefs)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(n):
        ov[i] = _ppoly_scalar(xv[i], kv, cv)
    return out


cdef double _fsum(double[::1] v) noexcept nogil:
    # Neumaier compensated summation
    cdef double s = v[0]
    cdef double c = 0.0
    cdef double t
    cdef Py_ssize_t i
    for i in range(1, v.shape[0]):
        t = s + v[i]
        if abs(s) >= abs(v[i]):
            c += (s - t) + v[i]
        else:
            c += (v[i] - t) + s
        s = t
    return s + c


cdef void _residual(double[::1] u, double[::1] u_old, double lam,
                    double[::1] knots, double[:, ::1] rho_c,
                    double[::1] p, double[::1] f) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i
    for i in range(n):
        p[i] = _ppoly_scalar(u[i], knots, rho_c)
    f[0] = u[0] - u_old[0] - lam * (p[1] - p[0])
    for i in range(1, n - 1):
        f[i] = u[i] - u_old[i] - lam * (p[i - 1] - 2.0 * p[i] + p[i + 1])
    f[n - 1] = u[n - 1] - u_old[n - 1] - lam * (p[n - 2] - p[n - 1])


cdef double _max_abs(double[::1] v) noexcept nogil:
    cdef double m = 0.0
    cdef Py_ssize_t i
    for i in range(v.shape[0]):
        if abs(v[i]) > m:
            m = abs(v[i])
    return m


def advance_implicit(cnp.ndarray[cnp.float64_t, ndim=1] u_arr, Py_ssize_t n_steps, double dt,
                     double h, cnp.ndarray[cnp.float64_t, ndim=1] knots_arr,
                     cnp.ndarray[cnp.float64_t, ndim=2] rho_arr,
                     cnp.ndarray[cnp.float64_t, ndim=2] sig_arr,
                     double tol, int max_newton, double mass_ref):
    cdef double lam = dt / (h * h)
    cdef Py_ssize_t n = u_arr.shape[0]
    cdef double[::1] u = u_arr
    cdef double[::1] knots = np.ascontiguousarray(knots_arr)
    cdef double[:, ::1] rho_c = np.ascontiguousarray(rho_arr)
    cdef double[:, ::1] sig_c = np.ascontiguousarray(sig_arr)
    cdef double[::1] u_old = np.empty(n)
    cdef double[::1] trial = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] f = np.empty(n)
    cdef double[::1] f_try = np.empty(n)
    cdef double[::1] sub = np.empty(n)
    cdef double[::1] diag = np.empty(n)
    cdef double[::1] sup = np.empty(n)
    cdef double[::1] delta = np.empty(n)
    cdef double[::1] cp = np.empty(n)
    cdef double[::1] dp = np.empty(n)
    cdef long newton_total = 0
    cdef double max_resid = 0.0, max_shift = 0.0
    cdef Py_ssize_t step, i, it, ls
    cdef double fn, fn_try, scale, sgi, shift, m, denom, fn_prev
    cdef bint improved, finite

    for step in range(n_steps):
        for i in range(n):
            u_old[i] = u[i]
        _residual(u, u_old, lam, knots, rho_c, p, f)
        fn = _max_abs(f)
        for it in range(max_newton):
            if fn <= tol:
                break
            fn_prev = fn
            for i in range(n):
                sgi = _ppoly_scalar(u[i], knots, sig_c)
                diag[i] = 1.0 + lam * (2.0 if 0 < i < n - 1 else 1.0) * sgi
                sub[i] = -lam * sgi   # J[i+1, i] uses sigma(u_i)
                sup[i] = -lam * sgi   # J[i-1, i] uses sigma(u_i)
            # Thomas solve J delta = f  (sub/sup indexed by the column value)
            cp[0] = sup[1] / diag[0]
            dp[0] = f[0] / diag[0]
            for i in range(1, n):
                denom = diag[i] - sub[i - 1] * cp[i - 1]
                cp[i] = (sup[i + 1] / denom) if i < n - 1 else 0.0
                dp[i] = (f[i] - sub[i - 1] * dp[i - 1]) / denom
            delta[n - 1] = dp[n - 1]
            for i in range(n - 2, -1, -1):
                delta[i] = dp[i] - cp[i] * delta[i + 1]
            scale = 1.0
            improved = False
            for ls in range(25):
                for i in range(n):
                    trial[i] = u[i] - scale * delta[i]
                _residual(trial, u_old, lam, knots, rho_c, p, f_try)
                fn_try = _max_abs(f_try)
                if fn_try < fn:
                    for i in range(n):
                        u[i] = trial[i]
                        f[i] = f_try[i]
                    fn = fn_try
                    improved = True
                    break
                scale *= 0.5
            if not improved:
                break
            newton_total += 1
            if fn > 0.5 * fn_prev:
                break  # at the rounding floor; further iterations cannot help
        finite = True
        for i in range(n):
            if not (u[i] == u[i]) or u[i] > 1e300 or u[i] < -1e300:
                finite = False
        if not finite:
            raise FloatingPointError(f"non-finite state at step {step}")
        if fn > max_resid:
            max_resid = fn
        shift = (mass_ref - _fsum(u)) / n
        for i in range(n):
            u[i] += shift
        if abs(shift) > max_shift:
            max_shift = abs(shift)
    return {"newton_total": newton_total, "max_residual": max_resid, "max_shift": max_shift}


def advance_explicit(cnp.ndarray[cnp.float64_t, ndim=1] u_arr, Py_ssize_t n_steps, double dt,
                     double h, cnp.ndarray[cnp.float64_t, ndim=1] knots_arr,
                     cnp.ndarray[cnp.float64_t, ndim=2] rho_arr,
                     cnp.ndarray[cnp.float64_t, ndim=2] sig_arr, double mass_ref):
    cdef double lam = dt / (h * h)
    cdef Py_ssize_t n = u_arr.shape[0]
    cdef double[::1] u = u_arr
    cdef double[::1] knots = np.ascontiguousarray(knots_arr)
    cdef double[:, ::1] rho_c = np.ascontiguousarray(rho_arr)
    cdef double[::1] p = np.empty(n)
    cdef double max_shift = 0.0
    cdef Py_ssize_t step, i
    cdef double shift
    cdef bint finite
    for step in range(n_steps):
        for i in range(n):
            p[i] = _ppoly_scalar(u[i], knots, rho_c)
        u[0] += lam * (p[1] - p[0])
        for i in range(1, n - 1):
            u[i] += lam * (p[i - 1] - 2.0 * p[i] + p[i + 1])
        u[n - 1] += lam * (p[n - 2] - p[n - 1])
        finite = True
        for i in range(n):
            if not (u[i] == u[i]) or u[i] > 1e300 or u[i] < -1e300:
                finite = False
        if not finite:
            raise FloatingPointError(f"non-finite state at step {step}")
        shift = (mass_ref - _fsum(u)) / n
        for i in range(n):
            u[i] += shift
        if abs(shift) > max_shift:
            max_shift = abs(shift)
    return {"newton_total": 0, "max_residual": 0.0, "max_shift": max_shift}
