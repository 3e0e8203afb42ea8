"""Per-observation EP machinery for the network likelihood.

Each observation contributes scalar sites on the hidden activations
``h_k = x'w_k``, a rank-one site ``alpha alpha'`` on the output weights, and
(when the noise level is inferred) a scalar site on ``theta = log sigma^2``.
This module builds the cavity distributions, computes tilted moments for
``v``, ``h_k`` and ``theta``, and turns them into damped site updates. The
rank-one precision damping collapses the rank-two damped site onto its
dominant eigen-direction while correcting the location so the posterior mean
stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .activation import activation_moments
from .exceptions import CavityCollapse, DegenerateMass, SkippedUpdate
from .gaussians import Gaussian1D, GaussianDense, NaturalSite1D, cavity_scalar
from .quadrature import LOG_MASS_FLOOR, QuadratureRule, quad_moments_log, uniform_rule

LOG_2PI = math.log(2.0 * math.pi)

#: Default grid for theta and hidden-activation tilts: the densities may be
#: multimodal, so a wide uniform grid is used instead of Gauss-Hermite.
TILT_GRID_NODES = 400
TILT_GRID_HALF_WIDTH = 8.0

#: Floor applied to tilted variances before site updates.
VARIANCE_FLOOR = 1e-10


@dataclass
class LikelihoodSites:
    """Natural-form likelihood site parameters for all n observations."""

    tauw: np.ndarray  # (n, K) hidden-activation site precisions
    nuw: np.ndarray  # (n, K) hidden-activation site locations
    alpha: np.ndarray  # (n, K+1) rank-one output-weight site vectors
    nuv: np.ndarray  # (n, K+1) output-weight site locations
    theta_tau: np.ndarray  # (n,) noise site precisions
    theta_nu: np.ndarray  # (n,) noise site locations

    @classmethod
    def zeros(cls, n: int, K: int) -> "LikelihoodSites":
        return cls(
            tauw=np.zeros((n, K)), nuw=np.zeros((n, K)),
            alpha=np.zeros((n, K + 1)), nuv=np.zeros((n, K + 1)),
            theta_tau=np.zeros(n), theta_nu=np.zeros(n),
        )

    @property
    def n(self) -> int:
        return self.tauw.shape[0]

    @property
    def K(self) -> int:
        return self.tauw.shape[1]

    def theta_site(self, i: int) -> NaturalSite1D:
        return NaturalSite1D(float(self.theta_tau[i]), float(self.theta_nu[i]))

    def copy(self) -> "LikelihoodSites":
        return LikelihoodSites(self.tauw.copy(), self.nuw.copy(), self.alpha.copy(),
                               self.nuv.copy(), self.theta_tau.copy(), self.theta_nu.copy())


@dataclass
class CavityBundle:
    """All cavity distributions of one observation."""

    h_mean: np.ndarray  # (K,)
    h_var: np.ndarray  # (K,)
    v: GaussianDense  # dim K+1
    theta: Gaussian1D | None = None


@dataclass
class TiltedSummary:
    """Tilted moments and shared intermediates of one site visit."""

    log_zhat: float
    v_mean: np.ndarray
    v_cov: np.ndarray
    h_mean: np.ndarray
    h_var: np.ndarray
    theta_mean: float
    theta_var: float
    a_hat: float
    b_hat: float
    m_g: np.ndarray  # (K+1,) activation means under the h cavities, bias last
    v_g: np.ndarray  # (K+1,) activation variances, bias entry 0
    m_f: float
    v_f: float
    cross: np.ndarray = field(default=None)  # type: ignore[assignment]
    h_ok: np.ndarray = field(default=None)  # type: ignore[assignment]


def cavity_v(q: GaussianDense, alpha: np.ndarray, nuv: np.ndarray, eta: float) -> GaussianDense:
    """Remove a fraction of a rank-one output-weight site from q(v).

    With s = 1/eta - alpha'S alpha and a = m - eta*S*nuv:
    S_cav = S + S alpha s^{-1} alpha'S,  m_cav = a + S alpha s^{-1} alpha'a.
    """
    c = q.cov @ alpha
    s = 1.0 / eta - float(alpha @ c)
    if s <= 0.0:
        raise CavityCollapse(f"output-weight cavity scale {s:.3e} <= 0")
    a = q.mean - eta * (q.cov @ nuv)
    cov = q.cov + np.outer(c, c) / s
    mean = a + c * (float(alpha @ a) / s)
    return GaussianDense(mean, 0.5 * (cov + cov.T))


def predictive_f_moments(v_cav: GaussianDense, m_g: np.ndarray,
                         v_g: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Cavity-predictive moments of f = v'g(h) under independent h and v.

    m_f = m'm_g;  V_f = m_g'S m_g + v_g'(diag S + m o m);  cross = S m_g.
    """
    cross = v_cav.cov @ m_g
    m_f = float(v_cav.mean @ m_g)
    v_f = float(m_g @ cross) + float(v_g @ (np.diag(v_cav.cov) + v_cav.mean**2))
    return m_f, v_f, cross


def log_frac_const(theta, eta: float):
    """log Z(theta) = (1-eta)/2 * (log 2pi + theta) - log(eta)/2.

    The constant produced by raising the Gaussian observation density to the
    fraction eta and renormalizing.
    """
    return 0.5 * (1.0 - eta) * (LOG_2PI + np.asarray(theta, dtype=float)) - 0.5 * math.log(eta)


def tilted_theta_fixed(m_f: float, v_f: float, y: float, theta: float,
                       eta: float) -> tuple[float, float, float]:
    """Known-noise normalizer and inverse-variance: a_hat = b_hat = 1/V_y."""
    v_y = v_f + math.exp(theta) / eta
    log_zhat = float(log_frac_const(theta, eta)) - 0.5 * (LOG_2PI + math.log(v_y)) \
        - 0.5 * (y - m_f) ** 2 / v_y
    r = 1.0 / v_y
    return log_zhat, r, r


def tilted_theta(m_f: float, v_f: float, y: float, theta_cav: Gaussian1D, eta: float,
                 rule: QuadratureRule | None = None,
                 ) -> tuple[float, float, float, float, float]:
    """Tilted moments of the log noise variance, by a shared quadrature pass.

    The tilt is ``Z(theta) N(y | m_f, v_f + exp(theta)/eta) q_cav(theta)``.
    Besides the normalized mean/variance the same evaluations provide
    ``b_hat = E[1/V_y]`` and ``a_hat = E[1/V_y] - (y-m_f)^2 Var[1/V_y]`` under
    the tilted law, which drive the output-weight moments when theta is
    integrated out.

    Returns ``(log_zhat, theta_mean, theta_var, a_hat, b_hat)``.
    """
    if rule is None:
        rule = uniform_rule(TILT_GRID_NODES, TILT_GRID_HALF_WIDTH)
    sd = math.sqrt(theta_cav.var)
    theta = theta_cav.mean + sd * rule.nodes
    v_y = v_f + np.exp(theta) / eta
    log_lik = -0.5 * (LOG_2PI + np.log(v_y)) - 0.5 * (y - m_f) ** 2 / v_y
    log_f = log_frac_const(theta, eta) + log_lik
    log_w = rule.log_gaussian_weights() + log_f
    mx = float(np.max(log_w))
    if not np.isfinite(mx):
        raise DegenerateMass("theta tilt has no finite mass")
    w = np.exp(log_w - mx)
    s0 = float(np.sum(w))
    log_zhat = mx + math.log(s0)
    if log_zhat < LOG_MASS_FLOOR:
        raise DegenerateMass(f"theta tilt normalizer {log_zhat:.1f} below floor")
    p = w / s0
    t_mean = float(p @ rule.nodes)
    t_var = float(p @ (rule.nodes - t_mean) ** 2)
    r = 1.0 / v_y
    r_mean = float(p @ r)
    r_var = float(p @ (r - r_mean) ** 2)
    a_hat = r_mean - (y - m_f) ** 2 * r_var
    b_hat = r_mean
    return log_zhat, theta_cav.mean + sd * t_mean, theta_cav.var * t_var, a_hat, b_hat


def tilted_v(v_cav: GaussianDense, cross: np.ndarray, y: float, m_f: float,
             a_hat: float, b_hat: float) -> tuple[np.ndarray, np.ndarray]:
    """Tilted mean and covariance of the output weights.

    v_mean = m_cav + cross * b_hat * (y - m_f)
    v_cov  = S_cav - a_hat * cross cross'

    With fixed noise a_hat = b_hat = 1/V_y recovers exact joint-Gaussian
    conditioning on y; possible indefiniteness is handled at the site update.
    """
    v_mean = v_cav.mean + cross * (b_hat * (y - m_f))
    v_cov = v_cav.cov - a_hat * np.outer(cross, cross)
    return v_mean, v_cov


def tilted_h_all(cav: CavityBundle, m_g: np.ndarray, v_g: np.ndarray, cross: np.ndarray,
                 m_f: float, v_f: float, y: float, theta_star: float, eta: float,
                 rule: QuadratureRule | None = None,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tilted moments of every hidden activation, one grid pass per unit.

    Pins unit k's activation to (g(h), 0) inside the cavity-predictive output
    moments and integrates ``N(y | m(h), V(h) + exp(theta*)/eta) q_cav(h)``
    over a uniform grid; the activation moments of the other units are reused
    across nodes. ``theta_star`` is the plug-in noise value (the tilted mean
    when theta is inferred).

    Returns ``(means, vars, ok)`` where ``ok`` flags units whose grid mass
    stayed above the degeneracy floor; failed units keep their cavity moments.
    """
    if rule is None:
        rule = uniform_rule(TILT_GRID_NODES, TILT_GRID_HALF_WIDTH)
    K = cav.h_mean.shape[0]
    noise = math.exp(theta_star) / eta
    log_dt = np.log(rule.weights)
    mean, var, log_mass = kernels.tilted_h_batch(
        float(y), rule.nodes, log_dt,
        cav.h_mean, np.sqrt(cav.h_var),
        m_g[:K], v_g[:K], cross[:K], np.diag(cav.v.cov)[:K].copy(), cav.v.mean[:K],
        float(m_f), float(v_f), noise, 1.0 / math.sqrt(K),
    )
    ok = log_mass >= LOG_MASS_FLOOR
    mean = np.where(ok, mean, cav.h_mean)
    var = np.where(ok, var, cav.h_var)
    return mean, var, ok


def tilted_h(k: int, cav: CavityBundle, m_g: np.ndarray, v_g: np.ndarray, y: float,
             theta_star: float, eta: float,
             rule: QuadratureRule | None = None) -> tuple[float, float]:
    """Single-unit convenience wrapper around :func:`tilted_h_all`."""
    m_f, v_f, cross = predictive_f_moments(cav.v, m_g, v_g)
    mean, var, ok = tilted_h_all(cav, m_g, v_g, cross, m_f, v_f, y, theta_star, eta, rule)
    if not ok[k]:
        raise DegenerateMass(f"hidden-activation tilt {k} mass below floor")
    return float(mean[k]), float(var[k])


def site_update_scalar(tilted_mean: float, tilted_var: float, marg: Gaussian1D,
                       site: NaturalSite1D, eta: float, delta: float) -> NaturalSite1D:
    """Damped scalar site update from moment matching.

    tau += delta/eta * (1/V_hat - 1/V);  nu += delta/eta * (m_hat/V_hat - m/V).
    """
    scale = delta / eta
    dtau = scale * (1.0 / tilted_var - 1.0 / marg.var)
    dnu = scale * (tilted_mean / tilted_var - marg.mean / marg.var)
    return NaturalSite1D(site.tau + dtau, site.nu + dnu)


def _dominant_eigvec_2x2(G: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the largest eigenvalue of a symmetric 2x2 matrix."""
    a, b, c = G[0, 0], G[0, 1], G[1, 1]
    if b == 0.0:
        return np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    # largest root of the characteristic polynomial
    half_tr = 0.5 * (a + c)
    disc = math.sqrt(0.25 * (a - c) ** 2 + b * b)
    lam = half_tr + disc
    v = np.array([b, lam - a])
    n = math.hypot(v[0], v[1])
    if n == 0.0:
        return np.array([1.0, 0.0])
    return v / n


def site_update_v(v_cav: GaussianDense, m_g: np.ndarray, a_hat: float, b_hat: float,
                  y: float, m_f: float, alpha_old: np.ndarray, nuv_old: np.ndarray,
                  eta: float, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Damped rank-one output-weight site update.

    The undamped moment-matched site is
    ``alpha = m_g sign(a) |a|^{1/2} (1 - a q)^{-1/2} / sqrt(eta)`` and
    ``nuv = m_g (1 - a q)^{-1} (a m_g'm_cav + b (y - m_f)) / eta`` with
    ``q = m_g'S_cav m_g``. Damping the precision convexly gives a rank-two
    site ``A A'`` with ``A = [sqrt(1-delta) alpha_old, sqrt(delta) alpha]``;
    it is collapsed onto its dominant eigen-direction ``A v1`` and the damped
    location is corrected so the resulting posterior mean equals the one the
    rank-two site would produce.

    Raises
    ------
    SkippedUpdate
        If ``1 - a_hat q <= 0`` (the new site precision is undefined).
    """
    q = float(m_g @ (v_cav.cov @ m_g))
    denom = 1.0 - a_hat * q
    if denom <= 0.0:
        raise SkippedUpdate(f"1 - a_hat*q = {denom:.3e} <= 0")
    alpha_new = m_g * (math.copysign(math.sqrt(abs(a_hat)), a_hat)
                       / math.sqrt(denom) / math.sqrt(eta))
    nuv_new = m_g * ((a_hat * float(m_g @ v_cav.mean) + b_hat * (y - m_f)) / denom / eta)

    A = np.column_stack([math.sqrt(1.0 - delta) * alpha_old, math.sqrt(delta) * alpha_new])
    b = (1.0 - delta) * nuv_old + delta * nuv_new
    v1 = _dominant_eigvec_2x2(A.T @ A)
    alpha = A @ v1
    # fix the free sign: first nonzero component positive
    nz = np.nonzero(np.abs(alpha) > 0.0)[0]
    if nz.size and alpha[nz[0]] < 0.0:
        alpha = -alpha
    # location correction keeping the rank-two posterior mean exact
    M = A.T @ (v_cav.cov @ A) + np.eye(2) / eta
    u = A.T @ (v_cav.mean + eta * (v_cav.cov @ b))
    nuv = b + (A @ ((np.outer(v1, v1) - np.eye(2)) @ np.linalg.solve(M, u))) / eta
    return alpha, nuv


def visit_site(y: float, cav: CavityBundle, K: int, eta: float,
               theta_fixed: float | None,
               theta_rule: QuadratureRule | None = None,
               h_rule: QuadratureRule | None = None) -> TiltedSummary:
    """Compute all tilted moments of one observation from its cavities.

    Activation moments are computed once and shared across the v, theta and
    per-unit h tilts. ``theta_fixed`` selects the known-noise path; otherwise
    theta is tilted first and its mean is plugged into the h tilts.
    """
    m_g = np.ones(K + 1)
    v_g = np.zeros(K + 1)
    m_g[:K], v_g[:K] = activation_moments(cav.h_mean, cav.h_var, K)
    m_f, v_f, cross = predictive_f_moments(cav.v, m_g, v_g)

    if theta_fixed is not None:
        log_zhat, a_hat, b_hat = tilted_theta_fixed(m_f, v_f, y, theta_fixed, eta)
        theta_mean, theta_var = theta_fixed, 0.0
        theta_star = theta_fixed
    else:
        assert cav.theta is not None
        log_zhat, theta_mean, theta_var, a_hat, b_hat = tilted_theta(
            m_f, v_f, y, cav.theta, eta, theta_rule)
        theta_star = theta_mean

    v_mean, v_cov = tilted_v(cav.v, cross, y, m_f, a_hat, b_hat)
    h_mean, h_var, h_ok = tilted_h_all(cav, m_g, v_g, cross, m_f, v_f, y,
                                       theta_star, eta, h_rule)
    return TiltedSummary(
        log_zhat=log_zhat, v_mean=v_mean, v_cov=v_cov,
        h_mean=h_mean, h_var=np.maximum(h_var, VARIANCE_FLOOR),
        theta_mean=theta_mean, theta_var=max(theta_var, VARIANCE_FLOOR),
        a_hat=a_hat, b_hat=b_hat, m_g=m_g, v_g=v_g, m_f=m_f, v_f=v_f,
        cross=cross, h_ok=h_ok,
    )


__all__ = [
    "CavityBundle", "LikelihoodSites", "TiltedSummary",
    "cavity_scalar", "cavity_v", "predictive_f_moments",
    "tilted_theta", "tilted_theta_fixed", "tilted_v", "tilted_h", "tilted_h_all",
    "site_update_scalar", "site_update_v", "visit_site",
    "TILT_GRID_NODES", "TILT_GRID_HALF_WIDTH", "VARIANCE_FLOOR",
]
