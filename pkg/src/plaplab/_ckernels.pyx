# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled flux-form update kernels for the regularized p-Laplace equation."""
import numpy as np
from libc.math cimport pow, sqrt, fmax, fmin, INFINITY

BACKEND = "cython"


cdef inline double _coef(double q, double half_exp) nogil:
    # (|g|^2 + s^2)^((p-2)/2); callers never use the value when q == 0
    if half_exp == 0.0:
        return 1.0
    if half_exp == 0.5:
        return sqrt(q)
    if half_exp == 1.0:
        return q
    if half_exp == -0.5:
        return 1.0 / sqrt(q)
    return pow(q, half_exp)


cdef inline double _face_flux(double gn, double gt, double s2, double half_exp) nogil:
    cdef double q = gn * gn + gt * gt + s2
    if q == 0.0:
        return 0.0
    return _coef(q, half_exp) * gn


def flux_update_1d(double[::1] u, double h, double dt, double p, double s):
    cdef Py_ssize_t n = u.shape[0], i
    cdef double half_exp = 0.5 * (p - 2.0), s2 = s * s, lam = dt / h
    cdef double f_left, f_right
    out = np.array(u, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        f_left = _face_flux((u[1] - u[0]) / h, 0.0, s2, half_exp)
        for i in range(1, n - 1):
            f_right = _face_flux((u[i + 1] - u[i]) / h, 0.0, s2, half_exp)
            o[i] = u[i] + lam * (f_right - f_left)
            f_left = f_right
    return out


def flux_update_2d(double[:, ::1] u, double h, double dt, double p, double s):
    """One explicit step; every face flux is evaluated once."""
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], i, j
    cdef double half_exp = 0.5 * (p - 2.0), s2 = s * s, lam = dt / h
    cdef double inv_h = 1.0 / h, inv_4h = 0.25 / h
    out = np.array(u, dtype=np.float64)
    cdef double[:, ::1] o = out
    fx_arr = np.empty((max(nx - 1, 0), ny), dtype=np.float64)
    fy_arr = np.empty((nx, max(ny - 1, 0)), dtype=np.float64)
    cdef double[:, ::1] fx = fx_arr
    cdef double[:, ::1] fy = fy_arr
    with nogil:
        for i in range(nx - 1):
            for j in range(1, ny - 1):
                fx[i, j] = _face_flux((u[i + 1, j] - u[i, j]) * inv_h,
                                      (u[i, j + 1] - u[i, j - 1] + u[i + 1, j + 1] - u[i + 1, j - 1]) * inv_4h,
                                      s2, half_exp)
        for i in range(1, nx - 1):
            for j in range(ny - 1):
                fy[i, j] = _face_flux((u[i, j + 1] - u[i, j]) * inv_h,
                                      (u[i + 1, j] - u[i - 1, j] + u[i + 1, j + 1] - u[i - 1, j + 1]) * inv_4h,
                                      s2, half_exp)
        for i in range(1, nx - 1):
            for j in range(1, ny - 1):
                o[i, j] = u[i, j] + lam * (fx[i, j] - fx[i - 1, j] + fy[i, j] - fy[i, j - 1])
    return out


cdef inline double _extreme_coef(double q_min, double q_max, bint any_zero, double half_exp) nogil:
    # q^e is monotone in q, so only the extreme q matters
    if half_exp == 0.0:
        return 1.0
    if half_exp < 0.0:
        if any_zero:
            return INFINITY
        return _coef(q_min, half_exp)
    return _coef(q_max, half_exp) if q_max > 0.0 else 0.0


def max_coefficient_1d(double[::1] u, double h, double p, double s):
    cdef Py_ssize_t n = u.shape[0], i
    cdef double half_exp = 0.5 * (p - 2.0), s2 = s * s, g, q
    cdef double q_min = INFINITY, q_max = 0.0
    cdef bint any_zero = False
    if n < 2:
        return 0.0
    with nogil:
        for i in range(n - 1):
            g = (u[i + 1] - u[i]) / h
            q = g * g + s2
            if q == 0.0:
                any_zero = True
                continue
            q_min = fmin(q_min, q)
            q_max = fmax(q_max, q)
    return _extreme_coef(q_min, q_max, any_zero, half_exp)


def max_coefficient_2d(double[:, ::1] u, double h, double p, double s):
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], i, j
    cdef double half_exp = 0.5 * (p - 2.0), s2 = s * s, gn, gt, q
    cdef double inv_h = 1.0 / h, inv_4h = 0.25 / h
    cdef double q_min = INFINITY, q_max = 0.0
    cdef bint any_zero = False
    with nogil:
        for i in range(nx - 1):
            for j in range(1, ny - 1):
                gn = (u[i + 1, j] - u[i, j]) * inv_h
                gt = (u[i, j + 1] - u[i, j - 1] + u[i + 1, j + 1] - u[i + 1, j - 1]) * inv_4h
                q = gn * gn + gt * gt + s2
                if q == 0.0:
                    any_zero = True
                    continue
                q_min = fmin(q_min, q)
                q_max = fmax(q_max, q)
        for i in range(1, nx - 1):
            for j in range(ny - 1):
                gn = (u[i, j + 1] - u[i, j]) * inv_h
                gt = (u[i + 1, j] - u[i - 1, j] + u[i + 1, j + 1] - u[i - 1, j + 1]) * inv_4h
                q = gn * gn + gt * gt + s2
                if q == 0.0:
                    any_zero = True
                    continue
                q_min = fmin(q_min, q)
                q_max = fmax(q_max, q)
    return _extreme_coef(q_min, q_max, any_zero, half_exp)
