"""Independent reference computations used by the test suite.

These deliberately take different computational routes than the library:
brute-force dense algebra, grid quadrature over the hidden activations with
the output weights integrated out analytically, and Monte Carlo simulation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import simpson
from scipy.special import erf

LOG_2PI = math.log(2.0 * math.pi)


def g_act(x, K):
    return erf(np.asarray(x, dtype=float) / math.sqrt(2.0)) / math.sqrt(K)


def log_normal_pdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def dense_posterior(prec, loc):
    """Brute-force mean/cov from natural parameters via plain inversion."""
    cov = np.linalg.inv(prec)
    return cov @ loc, cov


def random_spd(rng, dim, scale=1.0):
    A = rng.standard_normal((dim, dim))
    return scale * (A @ A.T + dim * np.eye(dim))


class TiltedOracle:
    """Exact tilted distribution for fixed noise, via a grid over h.

    Given h, the observation is linear-Gaussian in the output weights, so v
    integrates out analytically; everything reduces to a K-dimensional grid.
    Supplies the normalizer, h moments and v moments of

        p(h, v) propto N(y | v'G(h), e^theta / eta)^ * q(h) q(v) * Z(theta)

    where G(h) = [g(h_1), ..., g(h_K), 1].
    """

    def __init__(self, h_mean, h_var, v_mean, v_cov, y, theta, eta=1.0, K=None,
                 n_nodes=801, half_width=12.0):
        self.h_mean = np.atleast_1d(np.asarray(h_mean, dtype=float))
        self.h_var = np.atleast_1d(np.asarray(h_var, dtype=float))
        self.K = self.h_mean.size if K is None else K
        self.v_mean = np.asarray(v_mean, dtype=float)
        self.v_cov = np.asarray(v_cov, dtype=float)
        self.y = float(y)
        self.noise = math.exp(theta) / eta
        self.log_const = 0.5 * (1.0 - eta) * (LOG_2PI + theta) - 0.5 * math.log(eta)
        self.eta = eta
        grids = [m + math.sqrt(v) * np.linspace(-half_width, half_width, n_nodes)
                 for m, v in zip(self.h_mean, self.h_var)]
        mesh = np.meshgrid(*grids, indexing="ij")
        self.h_nodes = np.stack([m.ravel() for m in mesh], axis=1)  # (M, K)
        self.grids = grids
        G = np.column_stack([g_act(self.h_nodes[:, k], self.K) for k in range(self.K)]
                            + [np.ones(self.h_nodes.shape[0])])
        self.G = G
        Sg = G @ self.v_cov  # (M, K+1)
        self.pred_var = np.einsum("mc,mc->m", Sg, G) + self.noise
        self.pred_mean = G @ self.v_mean
        self.gain = Sg / self.pred_var[:, None]  # Kalman gain rows
        log_w = log_normal_pdf(self.y, self.pred_mean, self.pred_var)
        for k in range(self.K):
            log_w = log_w + log_normal_pdf(self.h_nodes[:, k], self.h_mean[k],
                                           self.h_var[k])
        self.log_w = log_w
        mx = log_w.max()
        w = np.exp(log_w - mx)
        self._mass_shape = tuple(len(g) for g in grids)
        self._w = w
        self._mx = mx

    def _integrate(self, values):
        """Simpson integration of values * weight over the grid."""
        arr = (values * self._w).reshape(self._mass_shape)
        for axis in reversed(range(self.K)):
            arr = simpson(arr, x=self.grids[axis], axis=axis)
        return float(arr)

    def log_normalizer(self):
        return math.log(self._integrate(np.ones(self.h_nodes.shape[0]))) \
            + self._mx + self.log_const

    def h_moments(self):
        z = self._integrate(np.ones(self.h_nodes.shape[0]))
        means = np.array([self._integrate(self.h_nodes[:, k]) / z for k in range(self.K)])
        varis = np.array([
            self._integrate((self.h_nodes[:, k] - means[k]) ** 2) / z
            for k in range(self.K)
        ])
        return means, varis

    def v_moments(self):
        z = self._integrate(np.ones(self.h_nodes.shape[0]))
        resid = self.y - self.pred_mean
        cond_mean = self.v_mean[None, :] + self.gain * resid[:, None]
        dim = self.v_mean.size
        mean = np.array([self._integrate(cond_mean[:, c]) / z for c in range(dim)])
        cov = np.empty((dim, dim))
        # conditional covariance: S - gain * (G S)   (rank-one per node)
        GS = self.G @ self.v_cov  # (M, K+1)
        for a in range(dim):
            for b in range(a, dim):
                cond = self.v_cov[a, b] - self.gain[:, a] * GS[:, b]
                second = cond + (cond_mean[:, a] - mean[a]) * (cond_mean[:, b] - mean[b])
                cov[a, b] = cov[b, a] = self._integrate(second) / z
        return mean, cov


def linear_gaussian_evidence(Phi, y, prior_mean, prior_cov, noise_var):
    """log N(y; Phi m0, noise I + Phi S0 Phi')."""
    n = len(y)
    C = noise_var * np.eye(n) + Phi @ prior_cov @ Phi.T
    r = np.asarray(y) - Phi @ prior_mean
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    return float(-0.5 * (n * LOG_2PI + logdet + r @ np.linalg.solve(C, r)))


def linear_gaussian_posterior(Phi, y, prior_mean, prior_cov, noise_var):
    prec = np.linalg.inv(prior_cov) + Phi.T @ Phi / noise_var
    cov = np.linalg.inv(prec)
    mean = cov @ (np.linalg.solve(prior_cov, prior_mean) + Phi.T @ y / noise_var)
    return mean, cov


def simpson_grid_moments(log_density, lo, hi, n=4001):
    """Normalizer and first two moments of exp(log_density) on [lo, hi]."""
    if n % 2 == 0:
        n += 1
    x = np.linspace(lo, hi, n)
    ld = log_density(x)
    mx = ld.max()
    w = np.exp(ld - mx)
    z = simpson(w, x=x)
    mean = simpson(w * x, x=x) / z
    var = simpson(w * (x - mean) ** 2, x=x) / z
    return math.log(z) + mx, mean, var
