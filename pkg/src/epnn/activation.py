"""Scaled-erf activation and its moments under a Gaussian input.

The activation ``g(x) = K^{-1/2} erf(x / sqrt(2))`` keeps the prior variance
of the network output independent of the hidden-unit count K. For a Gaussian
input h ~ N(m, V) the mean of g(h) is available in closed form; the variance
requires a one-dimensional integral, evaluated here with a fixed
Gauss-Legendre rule.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .quadrature import gauss_legendre

SQRT2 = math.sqrt(2.0)

#: Node count for the variance integral; the integrand is smooth and bounded.
VAR_NODES = 100


def g(x, K: int):
    """Activation value ``K^{-1/2} erf(x / sqrt(2))``; odd and increasing."""
    return erf(np.asarray(x, dtype=float) / SQRT2) / math.sqrt(K)


def _mean_unit(m, V):
    # E[erf(h/sqrt(2))] for h ~ N(m, V); exact.
    m = np.asarray(m, dtype=float)
    V = np.asarray(V, dtype=float)
    return erf(m / np.sqrt(2.0 * (1.0 + V)))


def _var_unit(m, V, n_nodes: int = VAR_NODES):
    # Var[erf(h/sqrt(2))] = (2/pi) * int_0^{asin(rho)} exp(-m^2 / ((1+V)(1+sin t))) dt
    # with rho = V/(1+V); the asin argument is clamped against roundoff.
    m = np.atleast_1d(np.asarray(m, dtype=float))
    V = np.atleast_1d(np.asarray(V, dtype=float))
    rho = np.clip(V / (1.0 + V), 0.0, 1.0)
    upper = np.arcsin(rho)
    nodes, weights = gauss_legendre(n_nodes)
    # map [-1, 1] -> [0, upper] per element
    half = 0.5 * upper
    t = half[..., None] * (nodes + 1.0)
    integrand = np.exp(-(m[..., None] ** 2) / ((1.0 + V[..., None]) * (1.0 + np.sin(t))))
    integral = half * (integrand @ weights)
    return (2.0 / math.pi) * integral


def mean_g(m, V, K: int):
    """E[g(h)] for h ~ N(m, V): ``K^{-1/2} erf(m / sqrt(2(1+V)))``."""
    return _mean_unit(m, V) / math.sqrt(K)


def var_g(m, V, K: int, n_nodes: int = VAR_NODES):
    """Var[g(h)] for h ~ N(m, V), by fixed Gauss-Legendre quadrature.

    Zero variance collapses the integration interval, so ``var_g(m, 0, K)``
    is exactly 0; for m = 0 and V -> inf the value saturates at 1/K.
    """
    scalar = np.isscalar(m) and np.isscalar(V)
    out = _var_unit(m, V, n_nodes) / K
    return float(out[0]) if scalar else out


def activation_moments(m, V, K: int):
    """Mean and variance of g(h) for arrays of Gaussian input moments."""
    m = np.asarray(m, dtype=float)
    V = np.asarray(V, dtype=float)
    return mean_g(m, V, K), _var_unit(m, V) / K
