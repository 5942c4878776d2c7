"""NumPy implementations of the flux-form kernels (used when the extension is absent)."""
import numpy as np

BACKEND = "numpy"


def _face_flux(gn, gt2, p, s):
    q = gn * gn + gt2 + s * s
    if p == 2.0:
        return np.where(q > 0, gn, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.power(q, 0.5 * (p - 2.0))
    return np.where(q > 0, coef * gn, 0.0)


def _coefficients(q, p):
    if p == 2.0:
        return np.ones_like(q)
    with np.errstate(divide="ignore"):
        return np.power(q, 0.5 * (p - 2.0))


def flux_update_1d(u, h, dt, p, s):
    u = np.asarray(u, dtype=np.float64)
    f = _face_flux(np.diff(u) / h, 0.0, p, s)
    out = u.copy()
    out[1:-1] = u[1:-1] + (dt / h) * (f[1:] - f[:-1])
    return out


def _x_faces(u, h):
    """Normal and squared tangential gradient on faces (i+1/2, j), j interior."""
    gn = (u[1:, 1:-1] - u[:-1, 1:-1]) / h
    gt = (u[:-1, 2:] - u[:-1, :-2] + u[1:, 2:] - u[1:, :-2]) * (0.25 / h)
    return gn, gt * gt


def flux_update_2d(u, h, dt, p, s):
    u = np.asarray(u, dtype=np.float64)
    fx = _face_flux(*_x_faces(u, h), p, s)
    fy = _face_flux(*_x_faces(u.T, h), p, s).T
    out = u.copy()
    out[1:-1, 1:-1] = u[1:-1, 1:-1] + (dt / h) * (fx[1:, :] - fx[:-1, :] + fy[:, 1:] - fy[:, :-1])
    return out


def max_coefficient_1d(u, h, p, s):
    g = np.diff(np.asarray(u, dtype=np.float64)) / h
    return float(np.max(_coefficients(g * g + s * s, p)))


def max_coefficient_2d(u, h, p, s):
    u = np.asarray(u, dtype=np.float64)
    best = 0.0
    for arr in (u, u.T):
        gn, gt2 = _x_faces(arr, h)
        best = max(best, float(np.max(_coefficients(gn * gn + gt2 + s * s, p))))
    return best
