"""Predictive distribution and held-out evaluation metrics.

Predictions reuse the factorized output-moment formula with the posterior
(rather than cavity) moments; the observation density integrates the noise
variance out of a lognormal posterior with a Gauss-Hermite rule, which is
safe here because the integrand is smooth and unimodal in theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .activation import activation_moments
from .engine import PosteriorState
from .exceptions import DimensionMismatch
from .quadrature import gauss_hermite_rule

LOG_2PI = math.log(2.0 * math.pi)

PREDICT_THETA_NODES = 61


@dataclass
class PredictiveMoments:
    """Latent and observation moments at one test input."""

    f_mean: float
    f_var: float
    y_var: float
    log_density: Callable[[float], float]


def _latent_moments(state: PosteriorState, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Latent mean and variance of f at each row of X (bias column included)."""
    K = state.K
    d = state.qw[0].dim
    if X.shape[1] != d:
        raise DimensionMismatch(f"test inputs have {X.shape[1]} columns, model expects {d}")
    m_h = np.column_stack([X @ state.qw[k].mean for k in range(K)])
    V_h = np.column_stack([np.einsum("ia,ab,ib->i", X, state.qw[k].cov, X)
                           for k in range(K)])
    n = X.shape[0]
    m_g = np.ones((n, K + 1))
    v_g = np.zeros((n, K + 1))
    m_g[:, :K], v_g[:, :K] = activation_moments(m_h, np.maximum(V_h, 0.0), K)
    Sv, mv = state.qv.cov, state.qv.mean
    f_mean = m_g @ mv
    f_var = np.einsum("ic,ce,ie->i", m_g, Sv, m_g) + v_g @ (np.diag(Sv) + mv**2)
    return f_mean, f_var


def _log_density_grid(y, f_mean, f_var, theta_mean: float, theta_var: float,
                      n_nodes: int = PREDICT_THETA_NODES):
    """log p(y | x) integrating N(y | f_mean, f_var + e^theta) over q(theta)."""
    y = np.asarray(y, dtype=float)
    f_mean = np.asarray(f_mean, dtype=float)
    f_var = np.asarray(f_var, dtype=float)
    if theta_var <= 0.0:
        v = f_var + math.exp(theta_mean)
        return -0.5 * (LOG_2PI + np.log(v)) - 0.5 * (y - f_mean) ** 2 / v
    rule = gauss_hermite_rule(n_nodes)
    theta = theta_mean + math.sqrt(theta_var) * rule.nodes
    v = f_var[..., None] + np.exp(theta)
    log_n = -0.5 * (LOG_2PI + np.log(v)) - 0.5 * (y[..., None] - f_mean[..., None]) ** 2 / v
    mx = log_n.max(axis=-1)
    return mx + np.log(np.exp(log_n - mx[..., None]) @ rule.weights)


def predict(state: PosteriorState, x_star: np.ndarray) -> PredictiveMoments:
    """Predictive moments and observation log-density at one test input.

    ``x_star`` must follow the training convention (bias column appended).
    The observation variance adds the lognormal noise mean
    ``E[e^theta] = exp(mu + var/2)`` to the latent variance.
    """
    x = np.atleast_2d(np.asarray(x_star, dtype=float))
    f_mean, f_var = _latent_moments(state, x)
    th = state.qtheta
    y_var = f_var[0] + math.exp(th.mean + 0.5 * th.var)

    def log_density(y_star: float) -> float:
        return float(_log_density_grid(np.asarray([y_star]), f_mean, f_var,
                                       th.mean, th.var)[0])

    return PredictiveMoments(f_mean=float(f_mean[0]), f_var=float(f_var[0]),
                             y_var=float(y_var), log_density=log_density)


def predict_batch(state: PosteriorState, X: np.ndarray,
                  y: np.ndarray | None = None):
    """Vectorized predictions: (f_mean, y_var, lpd-or-None) per row of X."""
    X = np.asarray(X, dtype=float)
    f_mean, f_var = _latent_moments(state, X)
    th = state.qtheta
    y_var = f_var + math.exp(th.mean + 0.5 * th.var)
    lpd = None
    if y is not None:
        lpd = _log_density_grid(np.asarray(y, dtype=float), f_mean, f_var, th.mean, th.var)
    return f_mean, y_var, lpd


def evaluate(state: PosteriorState, test_X: np.ndarray, test_y: np.ndarray,
             y_mean: float = 0.0, y_std: float = 1.0) -> dict:
    """Per-point log predictive densities and squared errors plus summaries.

    ``test_X``/``test_y`` are in normalized units (training convention); pass
    the target normalization stats to also report metrics in original units.
    Summaries include the mean, standard deviation, lower 1% LPD percentile
    and upper 99% SE percentile.
    """
    test_X = np.asarray(test_X, dtype=float)
    test_y = np.asarray(test_y, dtype=float)
    if test_X.shape[0] != test_y.shape[0] or test_X.shape[0] == 0:
        raise DimensionMismatch("test set is empty or X/y lengths differ")
    f_mean, _, lpd = predict_batch(state, test_X, test_y)
    se = (test_y - f_mean) ** 2

    def summarize(lpd_vals, se_vals):
        return {
            "lpd_mean": float(np.mean(lpd_vals)),
            "lpd_std": float(np.std(lpd_vals)),
            "lpd_prct_1": float(np.percentile(lpd_vals, 1.0)),
            "se_mean": float(np.mean(se_vals)),
            "se_std": float(np.std(se_vals)),
            "se_prct_99": float(np.percentile(se_vals, 99.0)),
        }

    # density Jacobian of the target normalization: p_orig(y) = p_norm(y_norm)/std
    lpd_orig = lpd - math.log(y_std)
    se_orig = se * y_std**2
    return {
        "normalized": {"lpd": lpd, "se": se, "summary": summarize(lpd, se)},
        "original": {"lpd": lpd_orig, "se": se_orig,
                     "summary": summarize(lpd_orig, se_orig)},
    }
