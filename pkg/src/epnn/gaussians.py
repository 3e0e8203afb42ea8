"""Gaussian algebra primitives.

Moment-form Gaussians with lazily cached Cholesky factors, natural-form
site parameters, dense posterior assembly from rank-one site contributions,
rank-one covariance updates/downdates, and the Gaussian log-partition
function. All operations are value-semantic: inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .exceptions import CavityCollapse, DowndateViolation, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


class Gaussian1D(NamedTuple):
    """Scalar Gaussian in moment form."""

    mean: float
    var: float

    def natural(self) -> tuple[float, float]:
        """Return (tau, nu) = (1/var, mean/var)."""
        tau = 1.0 / self.var
        return tau, tau * self.mean


class NaturalSite1D(NamedTuple):
    """Unnormalized scalar Gaussian site in precision form.

    ``tau`` is the precision contribution and ``nu`` the precision-times-mean
    contribution. Sites may carry negative precision.
    """

    tau: float
    nu: float


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


@dataclass
class GaussianDense:
    """Dense multivariate Gaussian in moment form with a Cholesky cache."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise NotPositiveDefinite(
                f"covariance shape {self.cov.shape} does not match mean length {self.mean.size}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size

    def cholesky(self) -> np.ndarray:
        """Lower-triangular factor of ``cov``; computed and cached on demand."""
        if self.chol is None:
            try:
                self.chol = scipy.linalg.cholesky(self.cov, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(f"covariance not positive definite: {exc}") from exc
        return self.chol

    def logdet(self) -> float:
        L = self.cholesky()
        return 2.0 * float(np.sum(np.log(np.diag(L))))

    def natural_location(self) -> np.ndarray:
        """nu = cov^{-1} mean."""
        L = self.cholesky()
        return scipy.linalg.cho_solve((L, True), self.mean)

    def marginal(self, j: int) -> Gaussian1D:
        return Gaussian1D(float(self.mean[j]), float(self.cov[j, j]))

    def copy(self) -> "GaussianDense":
        return GaussianDense(self.mean.copy(), self.cov.copy(),
                             None if self.chol is None else self.chol.copy())


def _invert_precision(prec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (cov, chol_of_cov) for a precision matrix, or raise."""
    try:
        Lp = scipy.linalg.cholesky(prec, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"precision not positive definite: {exc}") from exc
    cov = scipy.linalg.cho_solve((Lp, True), np.eye(prec.shape[0]))
    cov = _symmetrize(cov)
    chol = scipy.linalg.cholesky(cov, lower=True)
    return cov, chol


def assemble_posterior_w(X: np.ndarray, tauw: np.ndarray, nuw: np.ndarray,
                         prior_tau: np.ndarray, prior_nu: np.ndarray) -> GaussianDense:
    """Assemble a per-unit input-weight posterior from scalar projection sites.

    Precision is ``X' diag(tauw) X + diag(prior_tau)`` and the location term
    ``X' nuw + prior_nu``; both the likelihood sites (one per observation,
    acting along ``x_i``) and the per-weight prior sites enter in natural form.

    Raises
    ------
    NotPositiveDefinite
        If the assembled precision has no Cholesky factor (diverged sites).
    """
    X = np.asarray(X, dtype=float)
    tauw = np.asarray(tauw, dtype=float)
    nuw = np.asarray(nuw, dtype=float)
    prec = X.T @ (tauw[:, None] * X) + np.diag(np.asarray(prior_tau, dtype=float))
    prec = _symmetrize(prec)
    cov, chol = _invert_precision(prec)
    mean = cov @ (X.T @ nuw + np.asarray(prior_nu, dtype=float))
    return GaussianDense(mean, cov, chol)


def assemble_posterior_v(alphas: np.ndarray, nuvs: np.ndarray,
                         prior_tau: np.ndarray, prior_nu: np.ndarray) -> GaussianDense:
    """Assemble the output-weight posterior from rank-one sites.

    Precision is ``sum_i alpha_i alpha_i' + diag(prior_tau)`` and the location
    term ``sum_i nuv_i + prior_nu``.
    """
    alphas = np.asarray(alphas, dtype=float)
    nuvs = np.asarray(nuvs, dtype=float)
    prec = np.diag(np.asarray(prior_tau, dtype=float)).copy()
    if alphas.size:
        prec = prec + alphas.T @ alphas
    prec = _symmetrize(prec)
    cov, chol = _invert_precision(prec)
    loc = np.asarray(prior_nu, dtype=float).copy()
    if nuvs.size:
        loc = loc + nuvs.sum(axis=0)
    mean = cov @ loc
    return GaussianDense(mean, cov, chol)


def rank_one_update(g: GaussianDense, x: np.ndarray, dtau: float, dnu: float) -> GaussianDense:
    """Add ``dtau * x x'`` to the precision and ``dnu * x`` to the location.

    Sherman-Morrison on the covariance; O(d^2). The result matches a full
    reassembly up to roundoff.

    Raises
    ------
    DowndateViolation
        If ``1 + dtau * x'Sx <= 0`` so the updated precision would lose
        positive definiteness along ``x``.
    """
    x = np.asarray(x, dtype=float)
    c = g.cov @ x
    q = float(x @ c)
    denom = 1.0 + dtau * q
    if denom <= 0.0:
        raise DowndateViolation(f"1 + dtau*x'Sx = {denom:.3e} <= 0")
    beta = dtau / denom
    cov = g.cov - beta * np.outer(c, c)
    mean = g.mean + c * (dnu - beta * (float(x @ g.mean) + dnu * q))
    return GaussianDense(mean, _symmetrize(cov))


def cavity_scalar(marg: Gaussian1D, site: NaturalSite1D, eta: float) -> Gaussian1D:
    """Remove a fraction ``eta`` of a scalar site from a scalar marginal.

    V_cav = (1/V - eta*tau)^{-1},  m_cav = V_cav (m/V - eta*nu).

    Raises
    ------
    CavityCollapse
        If the cavity precision is not strictly positive.
    """
    prec = 1.0 / marg.var - eta * site.tau
    if prec <= 0.0:
        raise CavityCollapse(f"cavity precision {prec:.3e} <= 0")
    var = 1.0 / prec
    mean = var * (marg.mean / marg.var - eta * site.nu)
    return Gaussian1D(mean, var)


def log_partition(mean: np.ndarray, cov: np.ndarray) -> float:
    """Gaussian log-partition in natural parameters.

    Psi(m, S) = m'S^{-1}m / 2 + log|S| / 2 + (d/2) log(2*pi).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        L = scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"covariance not positive definite: {exc}") from exc
    half = scipy.linalg.solve_triangular(L, mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return 0.5 * float(half @ half) + 0.5 * logdet + 0.5 * mean.size * LOG_2PI


def log_partition_1d(mean, var):
    """Scalar (vectorized) version of :func:`log_partition`."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    return 0.5 * (mean * mean / var + np.log(var) + LOG_2PI)
