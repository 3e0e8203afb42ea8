"""EP for the non-Gaussian weight priors.

Output weights carry left-truncated Student-t priors (moments by grid
quadrature on the positive half-line); input weights carry hierarchical
Laplace or Gaussian-ARD priors whose log-scales ``phi_l`` are shared within
predefined weight groups. The per-scale partial normalizer ``Z(phi, eta)``
and the conditional weight moments are available in closed form for both
families, so the joint (w, phi) tilt reduces to one shared set of phi-grid
evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, gammaln, log_ndtr, logsumexp

from .exceptions import ConfigError, DegenerateMass
from .gaussians import Gaussian1D, NaturalSite1D

LOG_2PI = math.log(2.0 * math.pi)

LAPLACE = "laplace"
GAUSSIAN_ARD = "gaussian-ard"

#: phi-grid defaults: Z(phi, eta) can be sharply peaked when the weight cavity
#: is tight, so a wide uniform grid is used.
PHI_GRID_NODES = 300
PHI_GRID_HALF_WIDTH = 8.0

#: Positive-half grid for the truncated Student-t tilt (composite Simpson).
V_GRID_NODES = 4001

VARIANCE_FLOOR = 1e-10
LOG_MASS_FLOOR = math.log(1e-300)


@dataclass
class PriorConfig:
    """Weight-prior configuration.

    ``group_index`` maps each of the K*d input weights (unit-major, bias
    column last within each unit) to the scale parameter it shares; if None it
    is derived from the family: one common group for Laplace, one group per
    input column (bias included) for Gaussian ARD.
    """

    family: str = LAPLACE
    group_index: np.ndarray | None = None
    mu_phi0: float = 2.0 * math.log(0.01)
    sigma_phi0_sq: float = 2.5**2
    nu_v: float = 4.0
    sigma_v0_sq: float = 1.0
    sigma_bias0_sq: float = 1.0
    eta_prior: float = 0.8
    delta_prior: float = 0.6

    def __post_init__(self):
        if self.family not in (LAPLACE, GAUSSIAN_ARD):
            raise ConfigError(f"unknown prior family {self.family!r}")
        if not 0.0 < self.eta_prior <= 1.0:
            raise ConfigError("eta_prior must be in (0, 1]")
        if not 0.0 < self.delta_prior <= 1.0:
            raise ConfigError("delta_prior must be in (0, 1]")
        for name in ("sigma_phi0_sq", "sigma_v0_sq", "sigma_bias0_sq"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.nu_v <= 2.0:
            raise ConfigError("nu_v must exceed 2 for a finite prior variance")
        if self.group_index is not None:
            self.group_index = np.asarray(self.group_index, dtype=int)

    def resolve_groups(self, K: int, d: int) -> np.ndarray:
        """Group index for all K*d input weights (0-based groups)."""
        if self.group_index is not None:
            idx = self.group_index
            if idx.size != K * d:
                raise ConfigError(f"group_index has {idx.size} entries, expected {K * d}")
            if idx.min() < 0:
                raise ConfigError("group_index entries must be >= 0")
            return idx
        if self.family == LAPLACE:
            return np.zeros(K * d, dtype=int)
        return np.tile(np.arange(d), K)


@dataclass
class WeightPriorSites:
    """Per-input-weight sites on (w_j, phi_{l_j}) in natural form."""

    w_tau: np.ndarray  # (Kd,)
    w_nu: np.ndarray
    phi_tau: np.ndarray
    phi_nu: np.ndarray
    group_index: np.ndarray
    n_groups: int

    @classmethod
    def fixed_gaussian(cls, K: int, d: int, cfg: PriorConfig,
                       w_var: float = 0.5, bias_var: float = 4.0) -> "WeightPriorSites":
        """Fixed zero-mean Gaussian initialization; bias column gets ``bias_var``."""
        groups = cfg.resolve_groups(K, d)
        var = np.full(K * d, w_var)
        var[d - 1 :: d] = bias_var  # bias column is last within each unit
        return cls(
            w_tau=1.0 / var, w_nu=np.zeros(K * d),
            phi_tau=np.zeros(K * d), phi_nu=np.zeros(K * d),
            group_index=groups, n_groups=int(groups.max()) + 1,
        )

    def unit_slice(self, k: int, d: int) -> slice:
        return slice(k * d, (k + 1) * d)

    def copy(self) -> "WeightPriorSites":
        return WeightPriorSites(self.w_tau.copy(), self.w_nu.copy(), self.phi_tau.copy(),
                                self.phi_nu.copy(), self.group_index, self.n_groups)


@dataclass
class OutputPriorSites:
    """Per-output-weight prior sites; the bias entry is a fixed Gaussian."""

    v_tau: np.ndarray  # (K+1,)
    v_nu: np.ndarray

    @classmethod
    def linspaced(cls, K: int, cfg: PriorConfig, lo: float = 1.0, hi: float = 2.0,
                  var: float = 0.2**2) -> "OutputPriorSites":
        """Linearly spaced positive prior means that break hidden-unit symmetry."""
        mu = np.linspace(lo, hi, K)
        tau = np.full(K + 1, 1.0 / var)
        tau[K] = 1.0 / cfg.sigma_bias0_sq
        nu = np.zeros(K + 1)
        nu[:K] = mu / var
        return cls(v_tau=tau, v_nu=nu)

    def copy(self) -> "OutputPriorSites":
        return OutputPriorSites(self.v_tau.copy(), self.v_nu.copy())


def assemble_phi(sites: WeightPriorSites, cfg: PriorConfig) -> list[Gaussian1D]:
    """q(phi_l) from the Gaussian hyperprior plus all member phi sites."""
    out = []
    for l in range(sites.n_groups):
        members = sites.group_index == l
        tau = 1.0 / cfg.sigma_phi0_sq + float(sites.phi_tau[members].sum())
        nu = cfg.mu_phi0 / cfg.sigma_phi0_sq + float(sites.phi_nu[members].sum())
        if tau <= 0.0:
            raise DegenerateMass(f"q(phi_{l}) precision {tau:.3e} <= 0")
        out.append(Gaussian1D(nu / tau, 1.0 / tau))
    return out


# ---------------------------------------------------------------------------
# closed-form pieces


def _tn_plus_moments(mu, sigma):
    """Mean and variance of N(mu, sigma^2) truncated to [0, inf), stable form.

    Uses the erfcx-based inverse Mills ratio R(t) = phi(t)/Phi(t); deep in the
    left tail (t << 0), where t + R(t) and 1 - t R - R^2 cancel, it switches
    to the asymptotic series of the Mills ratio. Far in the right tail the
    truncation is a no-op. Broadcasts over (mu, sigma).
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    t = mu / sigma
    # erfcx overflows around arg < -26; those t are covered by the right branch
    r = np.sqrt(2.0 / math.pi) / erfcx(np.clip(-t, -36.0, None) / math.sqrt(2.0))
    deep_left = t < -20.0
    x = np.where(deep_left, -t, 1.0)
    # series for t + R(t) and the variance ratio as t -> -inf
    shift = np.where(deep_left, 1.0 / x - 2.0 / x**3 + 10.0 / x**5, t + r)
    var_ratio = np.where(deep_left, 1.0 / x**2 - 6.0 / x**4, 1.0 - t * r - r * r)
    big_right = t > 25.0
    shift = np.where(big_right, t, shift)
    var_ratio = np.where(big_right, 1.0, var_ratio)
    mean = sigma * shift
    var = sigma**2 * np.maximum(var_ratio, 0.0)
    return mean, var


def _laplace_partial(m, V, phi, eta: float):
    """(logZ, Ew, Ew2) for a Gaussian cavity times a fractional Laplace prior.

    p(w|phi)^eta is proportional to exp(-a|w|) with a = eta/lambda and
    lambda = exp(phi/2)/sqrt(2); completing the square on each half-line gives
    a two-piece truncated-Gaussian mixture with closed-form log weights.
    Broadcasts over (m, V, phi).
    """
    m = np.asarray(m, dtype=float)
    V = np.asarray(V, dtype=float)
    phi = np.asarray(phi, dtype=float)
    lam = np.exp(0.5 * phi) / math.sqrt(2.0)
    a = eta / lam
    sd = np.sqrt(V)
    half = 0.5 * a * a * V
    log_wr = half - a * m + log_ndtr((m - a * V) / sd)
    log_wl = half + a * m + log_ndtr(-(m + a * V) / sd)
    log_tot = np.logaddexp(log_wr, log_wl)
    log_z = -eta * (math.log(2.0) + np.log(lam)) + log_tot
    # both piece weights from the same normalizer keeps the sign-flip
    # symmetry of the mixture bitwise exact
    p_r = np.exp(log_wr - log_tot)
    p_l = np.exp(log_wl - log_tot)
    mean_r, var_r = _tn_plus_moments(m - a * V, sd)
    mean_l_neg, var_l = _tn_plus_moments(-(m + a * V), sd)  # mirrored left piece
    ew = p_r * mean_r - p_l * mean_l_neg
    ew2 = p_r * (var_r + mean_r**2) + p_l * (var_l + mean_l_neg**2)
    return log_z, ew, ew2


def _gaussian_ard_partial(m, V, phi, eta: float):
    """(logZ, Ew, Ew2) for a Gaussian cavity times a fractional N(0, e^phi)."""
    m = np.asarray(m, dtype=float)
    V = np.asarray(V, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s_eta = np.exp(phi) / eta
    # N(w|0,s)^eta = C * N(w|0, s/eta), log C = (1-eta)/2 log(2 pi s) - log(eta)/2
    log_c = 0.5 * (1.0 - eta) * (LOG_2PI + phi) - 0.5 * math.log(eta)
    tot = V + s_eta
    log_z = log_c - 0.5 * (LOG_2PI + np.log(tot)) - 0.5 * m * m / tot
    ew = m * s_eta / tot
    vw = V * s_eta / tot
    return log_z, ew, vw + ew**2


def partial_Z_and_conditionals(family: str, w_cav: Gaussian1D, phi, eta: float):
    """Closed-form log normalizer and conditional moments at fixed scale.

    Returns ``(logZ, E(w|phi,eta), E(w^2|phi,eta))``; vectorized over ``phi``.
    """
    if family == LAPLACE:
        return _laplace_partial(w_cav.mean, w_cav.var, phi, eta)
    if family == GAUSSIAN_ARD:
        return _gaussian_ard_partial(w_cav.mean, w_cav.var, phi, eta)
    raise ConfigError(f"unknown prior family {family!r}")


def tilted_w_phi(w_cav: Gaussian1D, phi_cav: Gaussian1D, family: str, eta: float,
                 n_nodes: int = PHI_GRID_NODES, half_width: float = PHI_GRID_HALF_WIDTH,
                 ) -> tuple[float, float, float, float, float]:
    """Joint tilt of one weight and its scale, via a shared phi grid.

    The phi marginal is ``Z(phi, eta) q_cav(phi)`` normalized on the grid; the
    weight moments are the conditional expectations integrated against it.

    Returns ``(log_zhat, w_mean, w_var, phi_mean, phi_var)``.
    """
    sd = math.sqrt(phi_cav.var)
    t = np.linspace(-half_width, half_width, n_nodes)
    dt = t[1] - t[0]
    phi = phi_cav.mean + sd * t
    log_z, ew, ew2 = partial_Z_and_conditionals(family, w_cav, phi, eta)
    log_w = log_z - 0.5 * t * t
    mx = float(np.max(log_w))
    if not np.isfinite(mx):
        raise DegenerateMass("scale tilt has no finite mass")
    w = np.exp(log_w - mx)
    s0 = float(np.sum(w))
    log_zhat = mx + math.log(s0) + math.log(dt) - 0.5 * LOG_2PI
    if log_zhat < LOG_MASS_FLOOR:
        raise DegenerateMass(f"scale tilt normalizer {log_zhat:.1f} below floor")
    p = w / s0
    t_mean = float(p @ t)
    t_var = float(p @ (t - t_mean) ** 2)
    w_mean = float(p @ ew)
    w_var = float(p @ ew2) - w_mean**2
    return log_zhat, w_mean, max(w_var, VARIANCE_FLOOR), \
        phi_cav.mean + sd * t_mean, max(phi_cav.var * t_var, VARIANCE_FLOOR)


def logz_w_phi_batch(w_cav_m, w_cav_v, phi_cav_m, phi_cav_v, family: str, eta: float,
                     n_nodes: int = PHI_GRID_NODES,
                     half_width: float = PHI_GRID_HALF_WIDTH) -> np.ndarray:
    """Joint (w, phi) tilt normalizers for many weights at once.

    Vectorized counterpart of the normalizer computed in :func:`tilted_w_phi`,
    one phi grid row per weight.
    """
    w_cav_m = np.asarray(w_cav_m, dtype=float)[:, None]
    w_cav_v = np.asarray(w_cav_v, dtype=float)[:, None]
    phi_cav_m = np.asarray(phi_cav_m, dtype=float)[:, None]
    phi_cav_v = np.asarray(phi_cav_v, dtype=float)[:, None]
    t = np.linspace(-half_width, half_width, n_nodes)
    dt = t[1] - t[0]
    phi = phi_cav_m + np.sqrt(phi_cav_v) * t[None, :]
    if family == LAPLACE:
        log_z, _, _ = _laplace_partial(w_cav_m, w_cav_v, phi, eta)
    elif family == GAUSSIAN_ARD:
        log_z, _, _ = _gaussian_ard_partial(w_cav_m, w_cav_v, phi, eta)
    else:
        raise ConfigError(f"unknown prior family {family!r}")
    log_w = log_z - 0.5 * t[None, :] ** 2
    mx = log_w.max(axis=1)
    return mx + np.log(np.sum(np.exp(log_w - mx[:, None]), axis=1)) \
        + math.log(dt) - 0.5 * LOG_2PI


def log_student_t(v, nu: float, sigma2: float):
    """log t_nu(v | 0, sigma2)."""
    v = np.asarray(v, dtype=float)
    return (gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi * sigma2)
            - 0.5 * (nu + 1.0) * np.log1p(v * v / (nu * sigma2)))


def _simpson_weights(n: int, step: float) -> np.ndarray:
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (step / 3.0)


def tilted_truncated_t(v_cav: Gaussian1D, nu_v: float, sigma_v0_sq: float, eta: float,
                       n_nodes: int = V_GRID_NODES) -> tuple[float, float, float]:
    """Moments of a Gaussian cavity tilted by a fractional left-truncated t prior.

    Integrates ``q_cav(v) (2 t_nu(v|0, sigma^2))^eta`` with composite Simpson
    weights over ``[max(0, cav_mean - 10 cav_std), max(cav_mean, 0) + span]``
    where the span is ten cavity standard deviations, capped by the prior's
    own extent so nearly flat cavities still resolve the prior mass.

    Returns ``(log_zhat, mean, var)``.
    """
    if n_nodes % 2 == 0:
        n_nodes += 1
    sd = math.sqrt(v_cav.var)
    span = min(10.0 * sd, 60.0 * math.sqrt(sigma_v0_sq))
    lower = max(0.0, v_cav.mean - 10.0 * sd)
    upper = max(v_cav.mean, 0.0) + span
    v = np.linspace(lower, upper, n_nodes)
    log_f = eta * (math.log(2.0) + log_student_t(v, nu_v, sigma_v0_sq)) \
        - 0.5 * (LOG_2PI + math.log(v_cav.var)) - 0.5 * (v - v_cav.mean) ** 2 / v_cav.var
    log_w = log_f + np.log(_simpson_weights(n_nodes, v[1] - v[0]))
    log_zhat = float(logsumexp(log_w))
    if not np.isfinite(log_zhat) or log_zhat < LOG_MASS_FLOOR:
        raise DegenerateMass(f"truncated-t tilt normalizer {log_zhat!r} below floor")
    p = np.exp(log_w - log_zhat)
    mean = float(p @ v)
    var = float(p @ (v - mean) ** 2)
    return log_zhat, mean, max(var, VARIANCE_FLOOR)


# ---------------------------------------------------------------------------
# sweep drivers


@dataclass
class PriorSweepDiag:
    """Per-sweep diagnostics: worst moment residual and skip count."""

    max_resid: float = 0.0
    skips: int = 0
    visits: int = 0

    def track(self, tilted_mean, tilted_var, marg: Gaussian1D):
        sd = math.sqrt(marg.var)
        resid = max(abs(tilted_mean - marg.mean) / sd,
                    abs(math.log(tilted_var / marg.var)))
        self.max_resid = max(self.max_resid, resid)
        self.visits += 1


def _scalar_update(tilted_mean, tilted_var, marg: Gaussian1D, eta, delta):
    scale = delta / eta
    dtau = scale * (1.0 / tilted_var - 1.0 / marg.var)
    dnu = scale * (tilted_mean / tilted_var - marg.mean / marg.var)
    return dtau, dnu


def prior_sweep_v(qv, sites: OutputPriorSites, cfg: PriorConfig, delta: float,
                  max_passes: int = 100, tol: float = 1e-9):
    """Iterate the truncated-t output-weight prior EP to convergence.

    Mutates ``sites`` in place; returns ``(qv_new, diag)``. The bias entry is
    a fixed Gaussian and never updated. Runs scalar cavity / tilt / damped
    update passes over k = 1..K until site changes fall below ``tol``.
    """
    from .gaussians import cavity_scalar, rank_one_update
    from .exceptions import CavityCollapse, DowndateViolation

    K = sites.v_tau.size - 1
    eta = cfg.eta_prior
    skips = 0
    diag = PriorSweepDiag()
    for _ in range(max_passes):
        diag = PriorSweepDiag()  # residual of the final pass is the verdict
        biggest = 0.0
        for k in range(K):
            marg = qv.marginal(k)
            site = NaturalSite1D(float(sites.v_tau[k]), float(sites.v_nu[k]))
            try:
                cav = cavity_scalar(marg, site, eta)
                _, t_mean, t_var = tilted_truncated_t(cav, cfg.nu_v, cfg.sigma_v0_sq, eta)
            except (CavityCollapse, DegenerateMass):
                skips += 1
                continue
            diag.track(t_mean, t_var, marg)
            dtau, dnu = _scalar_update(t_mean, t_var, marg, eta, delta)
            e_k = np.zeros(K + 1)
            e_k[k] = 1.0
            try:
                qv = rank_one_update(qv, e_k, dtau, dnu)
            except DowndateViolation:
                skips += 1
                continue
            sites.v_tau[k] += dtau
            sites.v_nu[k] += dnu
            biggest = max(biggest, abs(dtau), abs(dnu))
        if biggest < tol:
            break
    diag.skips = skips
    return qv, diag


def prior_sweep_w(w_mean: np.ndarray, w_cov: np.ndarray, qphi: list[Gaussian1D],
                  sites: WeightPriorSites, cfg: PriorConfig, delta: float) -> PriorSweepDiag:
    """One pass of hierarchical weight-prior EP over all K*d weights.

    Mutates the stacked per-unit posteriors (``w_mean`` (K, d), ``w_cov``
    (K, d, d)), the scale posteriors ``qphi`` and ``sites`` in place,
    sequentially in ascending weight index: the phi-group coupling makes the
    update order significant.
    """
    from .gaussians import cavity_scalar
    from .exceptions import CavityCollapse

    K, d = w_mean.shape
    eta = cfg.eta_prior
    diag = PriorSweepDiag()
    for j in range(K * d):
        k, pos = divmod(j, d)
        l = int(sites.group_index[j])
        marg_w = Gaussian1D(float(w_mean[k, pos]), float(w_cov[k, pos, pos]))
        marg_phi = qphi[l]
        w_site = NaturalSite1D(float(sites.w_tau[j]), float(sites.w_nu[j]))
        phi_site = NaturalSite1D(float(sites.phi_tau[j]), float(sites.phi_nu[j]))
        try:
            w_cav = cavity_scalar(marg_w, w_site, eta)
            phi_cav = cavity_scalar(marg_phi, phi_site, eta)
            _, w_hat_m, w_hat_v, phi_hat_m, phi_hat_v = tilted_w_phi(
                w_cav, phi_cav, cfg.family, eta)
        except (CavityCollapse, DegenerateMass):
            diag.skips += 1
            continue
        diag.track(w_hat_m, w_hat_v, marg_w)
        diag.track(phi_hat_m, phi_hat_v, marg_phi)
        dtau_w, dnu_w = _scalar_update(w_hat_m, w_hat_v, marg_w, eta, delta)
        dtau_p, dnu_p = _scalar_update(phi_hat_m, phi_hat_v, marg_phi, eta, delta)
        # both updates must keep their posteriors proper, or the site is kept
        c = w_cov[k, :, pos].copy()
        denom = 1.0 + dtau_w * c[pos]
        phi_prec = 1.0 / marg_phi.var + dtau_p
        if denom <= 0.0 or phi_prec <= 0.0:
            diag.skips += 1
            continue
        beta = dtau_w / denom
        w_mean[k] += c * (dnu_w - beta * (w_mean[k, pos] + dnu_w * c[pos]))
        w_cov[k] -= beta * np.outer(c, c)
        phi_var = 1.0 / phi_prec
        qphi[l] = Gaussian1D(phi_var * (marg_phi.mean / marg_phi.var + dnu_p), phi_var)
        sites.w_tau[j] += dtau_w
        sites.w_nu[j] += dnu_w
        sites.phi_tau[j] += dtau_p
        sites.phi_nu[j] += dnu_p
    return diag
