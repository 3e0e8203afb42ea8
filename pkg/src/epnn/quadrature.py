"""One-dimensional quadrature rules for Gaussian-measure integrals.

Two rule families cover everything the EP updates need:

* Gauss-Hermite (probabilists'), for smooth unimodal integrands. Weights are
  normalized so they sum to one under the Gaussian measure.
* Uniform grids over ``mean +/- half_width`` standard deviations, for tilted
  densities that may be multimodal. Nodes and weights are stored on the
  standardized scale and shifted per call.

``quad_moments`` evaluates the normalizer of a tilt ``f`` against a Gaussian
together with the mean and variance of the normalized product density, all
from one shared set of function evaluations. A log-domain variant is used by
the tilted-moment routines to avoid underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .exceptions import DegenerateMass

#: Linear-domain normalizer floor below which a tilt is declared degenerate.
MASS_FLOOR = 1e-300
LOG_MASS_FLOOR = math.log(MASS_FLOOR)

GAUSS_HERMITE = "gauss-hermite"
UNIFORM_GRID = "uniform-grid"


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on the standardized (zero mean, unit variance) scale.

    For both kinds, ``sum(weights * phi_factor)`` approximates integration
    against N(0, 1): Gauss-Hermite weights already include the Gaussian
    measure, while uniform-grid weights are trapezoid cell widths and the
    standard normal density enters at evaluation time.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in (GAUSS_HERMITE, UNIFORM_GRID):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if not np.all(np.diff(self.nodes) > 0):
            raise ValueError("quadrature nodes must be strictly increasing")

    def log_gaussian_weights(self) -> np.ndarray:
        """Log weights for integrating f(x) N(x|mu, s2) dx on standardized nodes."""
        if self.kind == GAUSS_HERMITE:
            return np.log(self.weights)
        # uniform grid: weight * standard normal density at the node
        return np.log(self.weights) - 0.5 * self.nodes**2 - 0.5 * math.log(2.0 * math.pi)


@lru_cache(maxsize=32)
def gauss_hermite_rule(n: int = 61) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with weights summing to one."""
    if not 2 <= n <= 250:
        # hermegauss weights underflow past ~250 nodes; use a uniform grid instead
        raise ValueError(f"gauss-hermite order must be in [2, 250], got {n}")
    nodes, weights = hermegauss(n)
    weights = weights / math.sqrt(2.0 * math.pi)
    return QuadratureRule(nodes=nodes, weights=weights, kind=GAUSS_HERMITE)


@lru_cache(maxsize=32)
def uniform_rule(n: int = 400, half_width: float = 8.0) -> QuadratureRule:
    """Uniform grid over +/- ``half_width`` standard deviations, trapezoid weights."""
    nodes = np.linspace(-half_width, half_width, n)
    step = nodes[1] - nodes[0]
    weights = np.full(n, step)
    weights[0] = weights[-1] = 0.5 * step
    return QuadratureRule(nodes=nodes, weights=weights, kind=UNIFORM_GRID)


@lru_cache(maxsize=8)
def gauss_legendre(n: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    return leggauss(n)


def quad_moments(f: Callable[[np.ndarray], np.ndarray], mu: float, sigma2: float,
                 rule: QuadratureRule) -> tuple[float, float, float]:
    """Moments of the product density f(x) N(x|mu, sigma2) / Z.

    Returns ``(Z, mean, var)`` with Z the normalizer, computed from a single
    vectorized evaluation of ``f`` at the shifted nodes.

    Raises
    ------
    DegenerateMass
        If Z underflows below :data:`MASS_FLOOR`.
    """
    sd = math.sqrt(sigma2)
    x = mu + sd * rule.nodes
    fx = np.asarray(f(x), dtype=float)
    w = np.exp(rule.log_gaussian_weights()) * fx
    z = float(np.sum(w))
    if not np.isfinite(z) or z < MASS_FLOOR:
        raise DegenerateMass(f"tilt normalizer {z!r} below floor")
    p = w / z
    mean = float(p @ x)
    var = float(p @ (x - mean) ** 2)
    return z, mean, var


def quad_moments_log(log_f: np.ndarray, rule: QuadratureRule,
                     mu: float, sigma2: float) -> tuple[float, float, float]:
    """Log-domain counterpart of :func:`quad_moments`.

    ``log_f`` holds log tilt values already evaluated at
    ``mu + sqrt(sigma2) * rule.nodes``. Returns ``(log_Z, mean, var)``.
    """
    log_w = rule.log_gaussian_weights() + np.asarray(log_f, dtype=float)
    log_z = float(logsumexp(log_w))
    if not np.isfinite(log_z) or log_z < LOG_MASS_FLOOR:
        raise DegenerateMass(f"log tilt normalizer {log_z!r} below floor")
    p = np.exp(log_w - log_z)
    t_mean = float(p @ rule.nodes)
    t_var = float(p @ (rule.nodes - t_mean) ** 2)
    sd = math.sqrt(sigma2)
    return log_z, mu + sd * t_mean, sigma2 * t_var
