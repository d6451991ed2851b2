# cython: language_level=3
"""Compiled elementwise kernels.

Each function mirrors the one with the same name in ``_numpy_kernels``.
Inputs are C-contiguous float64 arrays; outputs are freshly allocated.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, isfinite

cnp.import_array()


cdef inline double _sigmoid(double v) nogil:
    cdef double e
    if v >= 0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def silu_forward(x):
    """Return ``(x * sigmoid(x), sigmoid(x))``."""
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray ya = np.empty_like(xa)
    cdef cnp.ndarray sa = np.empty_like(xa)
    cdef const double[::1] xv = xa.reshape(-1)
    cdef double[::1] yv = ya.reshape(-1)
    cdef double[::1] sv = sa.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double s
    with nogil:
        for i in range(n):
            s = _sigmoid(xv[i])
            sv[i] = s
            yv[i] = xv[i] * s
    return ya, sa


def silu_backward(x, sig, grad_out):
    """Gradient of SiLU given the cached sigmoid."""
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray sa = np.ascontiguousarray(sig, dtype=np.float64)
    cdef cnp.ndarray ga = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef cnp.ndarray out = np.empty_like(xa)
    cdef const double[::1] xv = xa.reshape(-1)
    cdef const double[::1] sv = sa.reshape(-1)
    cdef const double[::1] gv = ga.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double s
    with nogil:
        for i in range(n):
            s = sv[i]
            ov[i] = gv[i] * (s + xv[i] * s * (1.0 - s))
    return out


def adam_step(param, grad, m, v, double lr, double beta1, double beta2,
              double eps, double bc1, double bc2):
    """One bias-corrected Adam update; returns ``(param, m, v)`` as new arrays."""
    cdef cnp.ndarray pa = np.ascontiguousarray(param, dtype=np.float64)
    cdef cnp.ndarray ga = np.ascontiguousarray(grad, dtype=np.float64)
    cdef cnp.ndarray ma = np.ascontiguousarray(m, dtype=np.float64)
    cdef cnp.ndarray va = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.ndarray p_new = np.empty_like(pa)
    cdef cnp.ndarray m_new = np.empty_like(pa)
    cdef cnp.ndarray v_new = np.empty_like(pa)
    cdef const double[::1] p = pa.reshape(-1)
    cdef const double[::1] g = ga.reshape(-1)
    cdef const double[::1] m0 = ma.reshape(-1)
    cdef const double[::1] v0 = va.reshape(-1)
    cdef double[::1] p1 = p_new.reshape(-1)
    cdef double[::1] m1 = m_new.reshape(-1)
    cdef double[::1] v1 = v_new.reshape(-1)
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * m0[i] + (1.0 - beta1) * gi
            vi = beta2 * v0[i] + (1.0 - beta2) * (gi * gi)
            m1[i] = mi
            v1[i] = vi
            p1[i] = p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps)
    return p_new, m_new, v_new


def inpaint_update(x, score, z, observed, eps_fwd, mask,
                   double t, double t_next):
    """Fused reverse step for missing cells and forward perturbation for observed cells.

    ``mask`` is 1.0 where a cell is missing.
    """
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray sa = np.ascontiguousarray(score, dtype=np.float64)
    cdef cnp.ndarray za = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray oa = np.ascontiguousarray(observed, dtype=np.float64)
    cdef cnp.ndarray ea = np.ascontiguousarray(eps_fwd, dtype=np.float64)
    cdef cnp.ndarray ma = np.ascontiguousarray(mask, dtype=np.float64)
    cdef cnp.ndarray out = np.empty_like(xa)
    cdef const double[::1] xv = xa.reshape(-1)
    cdef const double[::1] sv = sa.reshape(-1)
    cdef const double[::1] zv = za.reshape(-1)
    cdef const double[::1] ov = oa.reshape(-1)
    cdef const double[::1] ev = ea.reshape(-1)
    cdef const double[::1] mv = ma.reshape(-1)
    cdef double[::1] res = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double dt = t - t_next
    cdef double drift = 2.0 * t * dt
    cdef double diffusion = sqrt(2.0 * t * dt)
    cdef double rev, fwd
    with nogil:
        for i in range(n):
            if mv[i] != 0.0:
                rev = xv[i] + drift * sv[i] + diffusion * zv[i]
                res[i] = rev
            else:
                fwd = ov[i] + t_next * ev[i]
                res[i] = fwd
    return out


def all_finite(a):
    """True when every entry of ``a`` is finite."""
    cdef cnp.ndarray aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] av = aa.reshape(-1)
    cdef Py_ssize_t i, n = av.shape[0]
    cdef bint ok = True
    with nogil:
        for i in range(n):
            if not isfinite(av[i]):
                ok = False
                break
    return ok
