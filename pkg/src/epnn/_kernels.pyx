# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of epnn._kernels_py; see that module's docstrings for the contract."""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, log, sqrt, INFINITY

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double SQRT2 = 1.4142135623730951


def tilted_h_batch(double y,
                   double[::1] t, double[::1] log_dt,
                   double[::1] h_mu, double[::1] h_sd,
                   double[::1] m_g, double[::1] v_g,
                   double[::1] c1, double[::1] c2, double[::1] c3,
                   double m_f, double v_f, double noise, double inv_sqrt_k):
    cdef Py_ssize_t K = h_mu.shape[0]
    cdef Py_ssize_t G = t.shape[0]
    cdef cnp.ndarray[double, ndim=1] mean = np.empty(K)
    cdef cnp.ndarray[double, ndim=1] var = np.empty(K)
    cdef cnp.ndarray[double, ndim=1] log_mass = np.empty(K)
    cdef cnp.ndarray[double, ndim=1] logp = np.empty(G)
    cdef cnp.ndarray[double, ndim=1] p = np.empty(G)
    cdef double[::1] logp_v = logp
    cdef double[::1] p_v = p
    cdef Py_ssize_t k, j
    cdef double base, h, gk, dg, m, V, Vy, resid, mx, s0, s1, tm, d, s2

    for k in range(K):
        base = v_f - v_g[k] * (c2[k] + c3[k] * c3[k])
        mx = -INFINITY
        for j in range(G):
            h = h_mu[k] + h_sd[k] * t[j]
            gk = inv_sqrt_k * erf(h / SQRT2)
            dg = gk - m_g[k]
            V = base + 2.0 * dg * c1[k] + dg * dg * c2[k]
            if V < 0.0:
                V = 0.0
            Vy = V + noise
            resid = y - m_f - c3[k] * dg
            logp_v[j] = -0.5 * log(Vy) - 0.5 * resid * resid / Vy - 0.5 * t[j] * t[j]
            if logp_v[j] > mx:
                mx = logp_v[j]
        if mx == -INFINITY:
            mean[k] = h_mu[k]
            var[k] = h_sd[k] * h_sd[k]
            log_mass[k] = -INFINITY
            continue
        s0 = 0.0
        s1 = 0.0
        for j in range(G):
            p_v[j] = exp(logp_v[j] - mx + log_dt[j])
            s0 += p_v[j]
            s1 += p_v[j] * t[j]
        tm = s1 / s0
        s2 = 0.0
        for j in range(G):
            d = t[j] - tm
            s2 += p_v[j] * d * d
        mean[k] = h_mu[k] + h_sd[k] * tm
        var[k] = h_sd[k] * h_sd[k] * (s2 / s0)
        log_mass[k] = mx + log(s0) - LOG_2PI
    return mean, var, log_mass
