"""Pure-numpy implementation of the hot tilted-moment grid kernels.

A compiled Cython twin (``epnn._kernels``) implements the same contract; the
active backend is chosen in :mod:`epnn.kernels`. Both versions must agree to
numerical roundoff - see ``tests/test_kernels.py``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

LOG_2PI = math.log(2.0 * math.pi)


def tilted_h_batch(y, t, log_dt, h_mu, h_sd, m_g, v_g, c1, c2, c3,
                   m_f, v_f, noise, inv_sqrt_k):
    """Tilted moments of every hidden activation on a shared standardized grid.

    For unit k the tilt on node h is
    ``N(y | m_k(h), V_k(h) + noise) * N(h | h_mu[k], h_sd[k]^2)`` where
    ``m_k`` and ``V_k`` are the output moments with the k-th activation pinned
    to (g(h), 0); only k-dependent terms are re-evaluated per node:

        m_k(h) = m_f + c3[k] * (g(h) - m_g[k])
        V_k(h) = v_f - v_g[k] * (c2[k] + c3[k]^2)
                 + 2 * (g(h) - m_g[k]) * c1[k] + (g(h) - m_g[k])^2 * c2[k]

    with c1 = (S_cav m_g)[k], c2 = S_cav[k, k], c3 = m_cav[k] of the
    output-weight cavity.

    Parameters are 1-D arrays over units (length K) except the grid arrays
    ``t``/``log_dt`` (length G) and scalars ``y, m_f, v_f, noise, inv_sqrt_k``.

    Returns ``(mean, var, log_mass)`` arrays of length K; ``log_mass`` is the
    log normalizer of each tilt (excluding the fractional-EP constant), used
    for degenerate-mass checks.
    """
    K = h_mu.shape[0]
    h = h_mu[:, None] + h_sd[:, None] * t[None, :]
    gk = inv_sqrt_k * erf(h / math.sqrt(2.0))
    dg = gk - m_g[:, None]
    m = m_f + c3[:, None] * dg
    V = (v_f - v_g * (c2 + c3 * c3))[:, None] + 2.0 * dg * c1[:, None] + dg * dg * c2[:, None]
    Vy = np.maximum(V, 0.0) + noise
    resid = y - m
    logp = -0.5 * np.log(Vy) - 0.5 * resid * resid / Vy - 0.5 * t[None, :] ** 2

    mx = np.max(logp, axis=1)
    safe = np.isfinite(mx) & np.all(np.isfinite(Vy) & (Vy > 0.0), axis=1)
    mean = h_mu.copy()
    var = h_sd * h_sd
    log_mass = np.full(K, -np.inf)
    if np.any(safe):
        idx = np.nonzero(safe)[0]
        p = np.exp(logp[idx] - mx[idx, None]) * np.exp(log_dt)[None, :]
        s0 = p.sum(axis=1)
        t_mean = (p @ t) / s0
        d = t[None, :] - t_mean[:, None]
        t_var = np.einsum("kj,kj->k", p, d * d) / s0
        mean[idx] = h_mu[idx] + h_sd[idx] * t_mean
        var[idx] = h_sd[idx] * h_sd[idx] * t_var
        # -log(2pi): one -log(2pi)/2 from the likelihood, one from the grid measure
        log_mass[idx] = mx[idx] + np.log(s0) - LOG_2PI
    return mean, var, log_mass
