"""EP fitting engine: initialization, sweep scheduling and evidence.

The fit interleaves three EP sub-algorithms in a staged schedule:

1. likelihood sweeps with the noise fixed to a small value and fixed Gaussian
   weight priors, which lets the linearly spaced output-weight prior means
   break the hidden-unit symmetry;
2. noise-site updates, started with one theta-only sweep that holds the other
   likelihood sites fixed;
3. output-weight prior EP (truncated Student-t), gated on a plateau of the
   leave-one-out predictive density;
4. hierarchical input-weight prior EP, gated on convergence of the likelihood
   and output-prior sites.

Convergence is measured as the worst tilted-vs-marginal moment residual
(means in units of the marginal standard deviation, variances as log ratios).
The marginal-likelihood evaluation recomputes every cavity and tilt from the
current sites, so its partial derivatives with respect to the site parameters
vanish at an EP fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import (CavityCollapse, ConfigError, DegenerateMass, Diverged,
                         DowndateViolation, NotPositiveDefinite, SkippedUpdate)
from .gaussians import (Gaussian1D, GaussianDense, NaturalSite1D,
                        assemble_posterior_v, assemble_posterior_w, cavity_scalar,
                        log_partition, log_partition_1d)
from .likelihood import (CavityBundle, LikelihoodSites, cavity_v, log_frac_const,
                         site_update_scalar, site_update_v, visit_site,
                         VARIANCE_FLOOR)
from .priors import (GAUSSIAN_ARD, LAPLACE, OutputPriorSites, PriorConfig,
                     WeightPriorSites, assemble_phi, logz_w_phi_batch,
                     prior_sweep_v, prior_sweep_w, tilted_truncated_t)
from .activation import activation_moments

LOG_2PI = math.log(2.0 * math.pi)

SEQUENTIAL = "sequential"
PARALLEL = "parallel"
RUN_ONCE = "run-once"
INNER = "inner"


@dataclass
class FitConfig:
    """Everything the fit needs besides the data."""

    K: int = 10
    eta: float = 0.95
    delta_w: float = 0.6
    delta_v: float = 0.2
    update_mode: str = SEQUENTIAL
    max_outer_iters: int = 200
    tol_moment_match: float = 1e-3
    init_iters: int = 15
    theta_known: float | None = None
    rng_seed: int = 0
    priors: PriorConfig = field(default_factory=PriorConfig)
    # noise prior on theta = log sigma^2
    mu_theta0: float = 2.0 * math.log(0.01)
    sigma_theta0_sq: float = 2.0**2
    # staged-schedule knobs
    theta_init: float = 2.0 * math.log(0.3)
    init_w_var: float = 0.5
    init_w_bias_var: float = 2.0**2
    init_v_lo: float = 1.0
    init_v_hi: float = 2.0
    init_v_var: float = 0.2**2
    enable_v_prior_ep: bool = True
    enable_w_prior_ep: bool = True
    w_prior_scheme: str = RUN_ONCE
    incremental_units: bool = False
    unit_ramp_every: int = 3
    loo_rel_tol: float = 1e-3
    loo_window: int = 3
    damping_backoff: float = 0.8
    damping_floor: float = 0.05
    skip_fraction_backoff: float = 0.1
    reassemble_every: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        for name in ("eta", "delta_w", "delta_v"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {val}")
        if self.update_mode not in (SEQUENTIAL, PARALLEL):
            raise ConfigError(f"unknown update_mode {self.update_mode!r}")
        if self.w_prior_scheme not in (RUN_ONCE, INNER):
            raise ConfigError(f"unknown w_prior_scheme {self.w_prior_scheme!r}")
        if self.sigma_theta0_sq <= 0.0:
            raise ConfigError("sigma_theta0_sq must be positive")
        if self.init_iters < 0 or self.max_outer_iters < 1:
            raise ConfigError("iteration counts must be positive")
        if self.init_iters == 0 and self.theta_known is None:
            raise ConfigError("theta updates need a warm start: set init_iters > 0 "
                              "or fix theta via theta_known")


@dataclass
class PosteriorState:
    """Factorized posterior: per-unit input weights, output weights, noise, scales."""

    qw: list[GaussianDense]
    qv: GaussianDense
    qtheta: Gaussian1D
    qphi: list[Gaussian1D]

    @property
    def K(self) -> int:
        return len(self.qw)


@dataclass
class FitReport:
    """Per-iteration traces plus the final verdict."""

    log_z_ep: list[float] = field(default_factory=list)
    log_z_loo: list[float] = field(default_factory=list)
    max_resid: list[float] = field(default_factory=list)
    skip_counts: list[int] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    stages: dict = field(default_factory=dict)
    final_delta_w: float = 0.0
    final_delta_v: float = 0.0

    def summary(self) -> dict:
        out = asdict(self)
        for key in ("log_z_ep", "log_z_loo", "max_resid"):
            out[key] = [float(v) if math.isfinite(v) else None for v in out[key]]
        out["skip_counts"] = [int(v) for v in out["skip_counts"]]
        return out


@dataclass
class SweepDiag:
    """Diagnostics of one likelihood sweep."""

    max_resid: float = 0.0
    skips: int = 0
    visits: int = 0
    log_zhats: np.ndarray = field(default=None)  # type: ignore[assignment]

    def track(self, tilted_mean, tilted_var, marg_mean, marg_var):
        resid = max(abs(tilted_mean - marg_mean) / math.sqrt(marg_var),
                    abs(math.log(max(tilted_var, VARIANCE_FLOOR) / marg_var)))
        self.max_resid = max(self.max_resid, resid)
        self.visits += 1


@dataclass
class EPFit:
    """Bundle returned by :func:`fit`."""

    config: FitConfig
    state: PosteriorState
    lik_sites: LikelihoodSites
    w_prior_sites: WeightPriorSites
    v_prior_sites: OutputPriorSites
    report: FitReport
    theta_fixed: float | None  # None once theta sites are active
    v_prior_active: bool
    w_prior_active: bool


# ---------------------------------------------------------------------------
# working state


@dataclass
class _Work:
    """Mutable stacked posterior owned by the engine."""

    w_mean: np.ndarray  # (K, d)
    w_cov: np.ndarray  # (K, d, d)
    qv: GaussianDense
    theta: Gaussian1D
    qphi: list[Gaussian1D]

    def copy(self) -> "_Work":
        return _Work(self.w_mean.copy(), self.w_cov.copy(), self.qv.copy(),
                     self.theta, list(self.qphi))

    def finite(self) -> bool:
        return (np.all(np.isfinite(self.w_mean)) and np.all(np.isfinite(self.w_cov))
                and np.all(np.isfinite(self.qv.mean)) and np.all(np.isfinite(self.qv.cov)))

    def to_state(self) -> PosteriorState:
        qw = [GaussianDense(self.w_mean[k].copy(), self.w_cov[k].copy())
              for k in range(self.w_mean.shape[0])]
        return PosteriorState(qw=qw, qv=self.qv.copy(), qtheta=self.theta,
                              qphi=list(self.qphi))


def _assemble_unit(X, lik: LikelihoodSites, wp: WeightPriorSites, k: int, d: int) -> GaussianDense:
    sl = wp.unit_slice(k, d)
    return assemble_posterior_w(X, lik.tauw[:, k], lik.nuw[:, k],
                                wp.w_tau[sl], wp.w_nu[sl])


def _assemble_theta(lik: LikelihoodSites, cfg: FitConfig) -> Gaussian1D:
    prec = 1.0 / cfg.sigma_theta0_sq + float(lik.theta_tau.sum())
    if prec <= 0.0:
        raise NotPositiveDefinite(f"q(theta) precision {prec:.3e} <= 0")
    loc = cfg.mu_theta0 / cfg.sigma_theta0_sq + float(lik.theta_nu.sum())
    return Gaussian1D(loc / prec, 1.0 / prec)


def _assemble_work(X, lik: LikelihoodSites, wp: WeightPriorSites,
                   vp: OutputPriorSites, cfg: FitConfig) -> _Work:
    K, d = cfg.K, X.shape[1]
    units = [_assemble_unit(X, lik, wp, k, d) for k in range(K)]
    qv = assemble_posterior_v(lik.alpha, lik.nuv, vp.v_tau, vp.v_nu)
    theta = (Gaussian1D(cfg.theta_known, 0.0) if cfg.theta_known is not None
             else _assemble_theta(lik, cfg))
    return _Work(
        w_mean=np.stack([u.mean for u in units]),
        w_cov=np.stack([u.cov for u in units]),
        qv=qv, theta=theta, qphi=assemble_phi(wp, cfg.priors),
    )


def initialize(X: np.ndarray, y: np.ndarray, cfg: FitConfig,
               ) -> tuple[PosteriorState, LikelihoodSites, WeightPriorSites, OutputPriorSites]:
    """Zeroed likelihood sites plus the symmetry-breaking fixed prior sites."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ConfigError(f"X {X.shape} and y {y.shape} are inconsistent")
    n, d = X.shape
    lik = LikelihoodSites.zeros(n, cfg.K)
    wp = WeightPriorSites.fixed_gaussian(cfg.K, d, cfg.priors,
                                         w_var=cfg.init_w_var, bias_var=cfg.init_w_bias_var)
    vp = OutputPriorSites.linspaced(cfg.K, cfg.priors, lo=cfg.init_v_lo,
                                    hi=cfg.init_v_hi, var=cfg.init_v_var)
    work = _assemble_work(X, lik, wp, vp, cfg)
    return work.to_state(), lik, wp, vp


# ---------------------------------------------------------------------------
# likelihood sweep


def sweep_likelihood(X, y, work: _Work, lik: LikelihoodSites, wp: WeightPriorSites,
                     vp: OutputPriorSites, cfg: FitConfig, *, theta_fixed: float | None,
                     delta_w: float, delta_v: float,
                     update_h: bool = True, update_v: bool = True,
                     update_theta: bool = True,
                     active_units: np.ndarray | None = None,
                     sequential: bool = True) -> SweepDiag:
    """One EP sweep over all likelihood sites; mutates ``work`` and ``lik``.

    ``theta_fixed`` selects the known-noise path. Sequential mode applies
    rank-one posterior updates per site; parallel mode recomputes the
    per-unit posteriors and q(theta) once after the sweep. q(v) is always
    recomputed after the sweep.
    """
    n, d = X.shape
    K = cfg.K
    eta = cfg.eta
    diag = SweepDiag(log_zhats=np.full(n, np.nan))
    infer_theta = theta_fixed is None
    if infer_theta:
        th_prec = 1.0 / work.theta.var
        th_loc = work.theta.mean * th_prec
    active = np.ones(K, dtype=bool) if active_units is None else active_units

    for i in range(n):
        x = X[i]
        m_h = work.w_mean @ x
        V_h = np.einsum("kab,a,b->k", work.w_cov, x, x)
        # cavities; any collapse skips the whole observation this sweep
        h_prec = 1.0 / V_h - eta * lik.tauw[i]
        if np.any(h_prec <= 0.0) or np.any(V_h <= 0.0):
            diag.skips += 1
            continue
        h_var_cav = 1.0 / h_prec
        h_mean_cav = h_var_cav * (m_h / V_h - eta * lik.nuw[i])
        try:
            v_cav = cavity_v(work.qv, lik.alpha[i], lik.nuv[i], eta)
            theta_cav = None
            if infer_theta:
                theta_cav = cavity_scalar(work.theta, lik.theta_site(i), eta)
            cav = CavityBundle(h_mean=h_mean_cav, h_var=h_var_cav, v=v_cav, theta=theta_cav)
            til = visit_site(float(y[i]), cav, K, eta, theta_fixed)
        except (CavityCollapse, DegenerateMass, NotPositiveDefinite):
            diag.skips += 1
            continue
        diag.log_zhats[i] = til.log_zhat

        # residuals against the current marginals (tilted vs marginal)
        for k in range(K):
            if til.h_ok[k]:
                diag.track(til.h_mean[k], til.h_var[k], m_h[k], V_h[k])
        v_diag = np.diag(work.qv.cov)
        for c in range(K + 1):
            diag.track(til.v_mean[c], til.v_cov[c, c], work.qv.mean[c], v_diag[c])
        if infer_theta:
            diag.track(til.theta_mean, til.theta_var, work.theta.mean, work.theta.var)

        if update_h:
            scale = delta_w / eta
            for k in range(K):
                if not (active[k] and til.h_ok[k]):
                    if active[k]:
                        diag.skips += 1
                    continue
                dtau = scale * (1.0 / til.h_var[k] - 1.0 / V_h[k])
                dnu = scale * (til.h_mean[k] / til.h_var[k] - m_h[k] / V_h[k])
                if sequential:
                    denom = 1.0 + dtau * V_h[k]
                    if denom <= 0.0:
                        diag.skips += 1
                        continue
                    c = work.w_cov[k] @ x
                    beta = dtau / denom
                    work.w_mean[k] += c * (dnu - beta * (m_h[k] + dnu * V_h[k]))
                    work.w_cov[k] -= beta * np.outer(c, c)
                lik.tauw[i, k] += dtau
                lik.nuw[i, k] += dnu

        if update_v:
            try:
                alpha_new, nuv_new = site_update_v(
                    v_cav, til.m_g, til.a_hat, til.b_hat, float(y[i]), til.m_f,
                    lik.alpha[i], lik.nuv[i], eta, delta_v)
                lik.alpha[i] = alpha_new
                lik.nuv[i] = nuv_new
            except SkippedUpdate:
                diag.skips += 1

        if update_theta and infer_theta:
            # theta sites follow the scalar rule with the likelihood damping
            scale = delta_w / eta
            dtau = scale * (1.0 / til.theta_var - 1.0 / work.theta.var)
            dnu = scale * (til.theta_mean / til.theta_var
                           - work.theta.mean / work.theta.var)
            if sequential:
                if th_prec + dtau <= 0.0:
                    diag.skips += 1
                    continue
                th_prec += dtau
                th_loc += dnu
                work.theta = Gaussian1D(th_loc / th_prec, 1.0 / th_prec)
            lik.theta_tau[i] += dtau
            lik.theta_nu[i] += dnu

    if not sequential:
        # parallel mode: one posterior recomputation per sweep
        for k in range(K):
            unit = _assemble_unit(X, lik, wp, k, d)
            work.w_mean[k] = unit.mean
            work.w_cov[k] = unit.cov
        if infer_theta:
            work.theta = _assemble_theta(lik, cfg)
    # q(v) is always recomputed in parallel after the sweep
    work.qv = assemble_posterior_v(lik.alpha, lik.nuv, vp.v_tau, vp.v_nu)
    return diag


def loo_density(log_zhats: np.ndarray) -> float:
    """Leave-one-out predictive density monitor: sum of log tilted normalizers."""
    return float(np.nansum(np.asarray(log_zhats, dtype=float)))


# ---------------------------------------------------------------------------
# staged fit


def _loo_plateau(history: list[float], window: int, rel_tol: float) -> bool:
    if len(history) < window + 1:
        return False
    recent = history[-(window + 1):]
    return all(abs(recent[j + 1] - recent[j]) / max(abs(recent[j]), 1.0) < rel_tol
               for j in range(window))


def _run_w_prior_to_convergence(work: _Work, wp: WeightPriorSites, cfg: FitConfig,
                                delta: float, tol: float, max_passes: int = 60) -> float:
    resid = math.inf
    for _ in range(max_passes):
        d = prior_sweep_w(work.w_mean, work.w_cov, work.qphi, wp, cfg.priors, delta)
        resid = d.max_resid
        if resid < tol:
            break
    return resid


def fit(X: np.ndarray, y: np.ndarray, cfg: FitConfig,
        init: tuple[LikelihoodSites, WeightPriorSites, OutputPriorSites] | None = None,
        ) -> EPFit:
    """Run the full staged EP schedule until moment matching or the iteration cap.

    ``init`` overrides the default site initialization (used for warm starts
    and for pinning parts of the model in tests).

    Raises
    ------
    Diverged
        If the posterior turns non-finite even at the damping floor.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if init is None:
        _, lik, wp, vp = initialize(X, y, cfg)
    else:
        lik, wp, vp = (s.copy() for s in init)
        if lik.K != cfg.K or lik.n != X.shape[0] or wp.w_tau.size != cfg.K * X.shape[1]:
            raise ConfigError("initial sites are inconsistent with the data/config")
    work = _assemble_work(X, lik, wp, vp, cfg)

    report = FitReport()
    delta_w, delta_v = cfg.delta_w, cfg.delta_v
    delta_p = cfg.priors.delta_prior
    sequential = cfg.update_mode == SEQUENTIAL
    theta_started = False  # theta sites active
    v_prior_on = False
    w_prior_on = False
    w_prior_ran = False
    loo_hist: list[float] = []
    loose_tol = 10.0 * cfg.tol_moment_match

    it = 0
    while it < cfg.max_outer_iters:
        it += 1
        snap = (lik.copy(), wp.copy(), vp.copy(), work.copy())
        try:
            resid = 0.0
            skips = 0
            # --- input-weight prior EP (gated on likelihood/v-prior convergence)
            prior_resid = 0.0
            if w_prior_on:
                lik_converged = (report.max_resid and report.max_resid[-1] < loose_tol)
                if cfg.w_prior_scheme == RUN_ONCE:
                    if lik_converged or not w_prior_ran:
                        prior_resid = _run_w_prior_to_convergence(
                            work, wp, cfg, delta_p, 0.5 * cfg.tol_moment_match)
                        w_prior_ran = True
                else:
                    d = prior_sweep_w(work.w_mean, work.w_cov, work.qphi, wp,
                                      cfg.priors, delta_p)
                    prior_resid = d.max_resid
                    skips += d.skips
                    w_prior_ran = True
            # --- likelihood sweep
            theta_fixed = cfg.theta_known
            if theta_fixed is None and not theta_started:
                theta_fixed = cfg.theta_init
            active = None
            if cfg.incremental_units and it <= cfg.init_iters:
                n_on = min(cfg.K, 1 + (it - 1) // cfg.unit_ramp_every)
                active = np.arange(cfg.K) < n_on
            diag = sweep_likelihood(
                X, y, work, lik, wp, vp, cfg, theta_fixed=theta_fixed,
                delta_w=delta_w, delta_v=delta_v, active_units=active,
                sequential=sequential)
            resid = max(diag.max_resid, prior_resid)
            skips += diag.skips
            # --- output-weight prior EP (after every q(v) recomputation)
            if v_prior_on:
                work.qv, vdiag = prior_sweep_v(work.qv, vp, cfg.priors, delta_p)
                resid = max(resid, vdiag.max_resid)
                skips += vdiag.skips
            if not work.finite():
                raise NotPositiveDefinite("posterior turned non-finite")
        except (NotPositiveDefinite, DowndateViolation, DegenerateMass):
            lik, wp, vp, work = snap
            if delta_w <= cfg.damping_floor and delta_v <= cfg.damping_floor:
                raise Diverged("posterior non-finite at the damping floor") from None
            delta_w = max(delta_w * cfg.damping_backoff, cfg.damping_floor)
            delta_v = max(delta_v * cfg.damping_backoff, cfg.damping_floor)
            delta_p = max(delta_p * cfg.damping_backoff, cfg.damping_floor)
            report.log_z_ep.append(math.nan)
            report.log_z_loo.append(math.nan)
            report.max_resid.append(math.inf)
            report.skip_counts.append(-1)
            continue

        # --- periodic full reassembly cancels rank-one roundoff drift
        if sequential and it % cfg.reassemble_every == 0:
            work = _assemble_work(X, lik, wp, vp, cfg)

        loo = loo_density(diag.log_zhats)
        loo_hist.append(loo)
        report.log_z_loo.append(loo)
        try:
            log_z_ep = marginal_likelihood(
                X, y, lik, wp, vp, cfg, theta_fixed=theta_fixed,
                v_prior_active=v_prior_on, w_prior_active=w_prior_on)
        except (NotPositiveDefinite, DegenerateMass):
            log_z_ep = math.nan
        report.log_z_ep.append(log_z_ep)
        report.max_resid.append(resid)
        report.skip_counts.append(skips)

        # --- skip-heavy sweeps trigger damping backoff
        total = max(diag.visits, 1)
        if skips > cfg.skip_fraction_backoff * total:
            delta_w = max(delta_w * cfg.damping_backoff, cfg.damping_floor)
            delta_v = max(delta_v * cfg.damping_backoff, cfg.damping_floor)

        # --- stage transitions
        if not theta_started and cfg.theta_known is None and it >= cfg.init_iters:
            theta_started = True
            report.stages.setdefault("theta", it)
            work.theta = Gaussian1D(cfg.mu_theta0, cfg.sigma_theta0_sq)
            # first theta-only sweep keeps the other likelihood sites fixed
            sweep_likelihood(X, y, work, lik, wp, vp, cfg, theta_fixed=None,
                             delta_w=delta_w, delta_v=delta_v,
                             update_h=False, update_v=False, update_theta=True,
                             sequential=sequential)
        theta_done = theta_started or cfg.theta_known is not None
        if (cfg.enable_v_prior_ep and not v_prior_on and theta_done
                and it >= cfg.init_iters
                and _loo_plateau(loo_hist, cfg.loo_window, cfg.loo_rel_tol)):
            v_prior_on = True
            report.stages.setdefault("v_prior", it)
        v_done = v_prior_on or not cfg.enable_v_prior_ep
        if (cfg.enable_w_prior_ep and not w_prior_on and theta_done and v_done
                and resid < loose_tol):
            w_prior_on = True
            report.stages.setdefault("w_prior", it)

        # --- convergence: every enabled stage active and residual below tol
        w_done = (not cfg.enable_w_prior_ep) or (w_prior_on and w_prior_ran)
        if theta_done and v_done and w_done and resid < cfg.tol_moment_match:
            report.converged = True
            break

    report.iterations = it
    report.final_delta_w = delta_w
    report.final_delta_v = delta_v
    work = _assemble_work(X, lik, wp, vp, cfg)  # cancel residual drift
    theta_fixed_final = None
    if cfg.theta_known is not None:
        theta_fixed_final = cfg.theta_known
    elif not theta_started:
        theta_fixed_final = cfg.theta_init
    return EPFit(config=cfg, state=work.to_state(), lik_sites=lik, w_prior_sites=wp,
                 v_prior_sites=vp, report=report, theta_fixed=theta_fixed_final,
                 v_prior_active=v_prior_on, w_prior_active=w_prior_on)


# ---------------------------------------------------------------------------
# marginal likelihood


def _psi_site_1d(tau: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Log partition of normalized-Gaussian sites given in natural form."""
    return log_partition_1d(nu / tau, 1.0 / tau)


def marginal_likelihood(X, y, lik: LikelihoodSites, wp: WeightPriorSites,
                        vp: OutputPriorSites, cfg: FitConfig, *,
                        theta_fixed: float | None = None,
                        v_prior_active: bool = True,
                        w_prior_active: bool = True) -> float:
    """EP evidence approximation, recomputed from the sites alone.

    Assembles the posterior, rebuilds every cavity and tilted normalizer, and
    combines Gaussian log-partition terms: the generic structure is

        log Z = Psi(q) - Psi(p0)
                + sum_sites (1/eta_site) [log Zhat + Psi(q_cav) - Psi(q)]

    evaluated blockwise over the factorized approximation. Fixed-Gaussian
    prior sites (inactive prior EP) are absorbed into the base measure p0.
    The result is stationary in the site parameters at an EP fixed point.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    K = cfg.K
    eta = cfg.eta
    eta_p = cfg.priors.eta_prior
    work = _assemble_work(X, lik, wp, vp, cfg)
    infer_theta = theta_fixed is None

    total = log_partition(work.qv.mean, work.qv.cov)
    for k in range(K):
        total += log_partition(work.w_mean[k], work.w_cov[k])
    if infer_theta:
        total += float(log_partition_1d(work.theta.mean, work.theta.var))
        total -= float(log_partition_1d(cfg.mu_theta0, cfg.sigma_theta0_sq))
    if w_prior_active:
        for ql in work.qphi:
            total += float(log_partition_1d(ql.mean, ql.var))
        total -= wp.n_groups * float(log_partition_1d(cfg.priors.mu_phi0,
                                                      cfg.priors.sigma_phi0_sq))

    if n > 0:
        total += _likelihood_evidence_terms(X, y, lik, work, cfg, theta_fixed)

    # --- input-weight prior terms
    if w_prior_active:
        w_marg_m = work.w_mean.ravel()
        w_marg_v = np.stack([np.diag(work.w_cov[k]) for k in range(K)]).ravel()
        prec = 1.0 / w_marg_v - eta_p * wp.w_tau
        if np.any(prec <= 0.0):
            raise NotPositiveDefinite("weight-prior cavity collapsed in evidence")
        w_cav_v = 1.0 / prec
        w_cav_m = w_cav_v * (w_marg_m / w_marg_v - eta_p * wp.w_nu)
        phi_m = np.array([work.qphi[l].mean for l in wp.group_index])
        phi_v = np.array([work.qphi[l].var for l in wp.group_index])
        prec_p = 1.0 / phi_v - eta_p * wp.phi_tau
        if np.any(prec_p <= 0.0):
            raise NotPositiveDefinite("scale-prior cavity collapsed in evidence")
        phi_cav_v = 1.0 / prec_p
        phi_cav_m = phi_cav_v * (phi_m / phi_v - eta_p * wp.phi_nu)
        log_zw = logz_w_phi_batch(w_cav_m, w_cav_v, phi_cav_m, phi_cav_v,
                                  cfg.priors.family, eta_p)
        total += float(np.sum(
            log_zw
            + log_partition_1d(w_cav_m, w_cav_v) - log_partition_1d(w_marg_m, w_marg_v)
            + log_partition_1d(phi_cav_m, phi_cav_v) - log_partition_1d(phi_m, phi_v)
        )) / eta_p
    else:
        total -= float(np.sum(_psi_site_1d(wp.w_tau, wp.w_nu)))

    # --- output-weight prior terms (bias prior is always part of the base)
    if v_prior_active:
        v_diag = np.diag(work.qv.cov)
        for k in range(K):
            marg = Gaussian1D(float(work.qv.mean[k]), float(v_diag[k]))
            cav = cavity_scalar(marg, NaturalSite1D(float(vp.v_tau[k]),
                                                    float(vp.v_nu[k])), eta_p)
            log_zv, _, _ = tilted_truncated_t(cav, cfg.priors.nu_v,
                                              cfg.priors.sigma_v0_sq, eta_p)
            total += (log_zv
                      + float(log_partition_1d(cav.mean, cav.var))
                      - float(log_partition_1d(marg.mean, marg.var))) / eta_p
        total -= float(_psi_site_1d(vp.v_tau[K:], vp.v_nu[K:])[0])
    else:
        total -= float(np.sum(_psi_site_1d(vp.v_tau, vp.v_nu)))
    return float(total)


def _likelihood_evidence_terms(X, y, lik: LikelihoodSites, work: _Work,
                               cfg: FitConfig, theta_fixed: float | None) -> float:
    """(1/eta) sum_i [log Zhat_i + cavity/marginal Psi differences], vectorized."""
    n, d = X.shape
    K = cfg.K
    eta = cfg.eta
    infer_theta = theta_fixed is None

    # hidden-activation marginals and cavities, (n, K)
    m_h = X @ work.w_mean.T
    V_h = np.einsum("ia,kab,ib->ik", X, work.w_cov, X)
    prec = 1.0 / V_h - eta * lik.tauw
    if np.any(prec <= 0.0):
        raise NotPositiveDefinite("activation cavity collapsed in evidence")
    Vc = 1.0 / prec
    mc = Vc * (m_h / V_h - eta * lik.nuw)
    total = float(np.sum(log_partition_1d(mc, Vc) - log_partition_1d(m_h, V_h))) / eta

    # output-weight cavities, vectorized over sites
    Sv, mv = work.qv.cov, work.qv.mean
    Sa = Sv @ lik.alpha.T  # (K+1, n)
    s = 1.0 / eta - np.einsum("ic,ci->i", lik.alpha, Sa)
    if np.any(s <= 0.0):
        raise NotPositiveDefinite("output-weight cavity collapsed in evidence")
    a = mv[:, None] - eta * (Sv @ lik.nuv.T)  # (K+1, n)
    a_alpha = np.einsum("ci,ic->i", a, lik.alpha)
    m_cav = a + Sa * (a_alpha / s)[None, :]
    diag_cav = np.diag(Sv)[:, None] + Sa * Sa / s[None, :]
    # Psi(v cavity) - Psi(v marginal) in expanded, rank-one form
    nuv_terms = np.einsum("ic,ci->i", lik.nuv, mv[:, None] + a)
    total += float(np.sum(-0.5 * (np.log(eta * s) - a_alpha**2 / s + eta * nuv_terms))) / eta

    # theta cavities
    if infer_theta:
        th_prec = 1.0 / work.theta.var - eta * lik.theta_tau
        if np.any(th_prec <= 0.0):
            raise NotPositiveDefinite("noise cavity collapsed in evidence")
        th_cav_v = 1.0 / th_prec
        th_cav_m = th_cav_v * (work.theta.mean / work.theta.var - eta * lik.theta_nu)
        total += float(np.sum(log_partition_1d(th_cav_m, th_cav_v)
                              - log_partition_1d(work.theta.mean, work.theta.var))) / eta

    # tilted normalizers log Zhat_i
    m_g = np.ones((n, K + 1))
    v_g = np.zeros((n, K + 1))
    m_g[:, :K], v_g[:, :K] = activation_moments(mc, Vc, K)
    m_f = np.einsum("ic,ci->i", m_g, m_cav)
    q1 = np.einsum("ic,ci->i", m_g, Sv @ m_g.T)
    q2 = np.einsum("ic,ci->i", m_g, Sa) ** 2 / s
    v_f = q1 + q2 + np.einsum("ic,ci->i", v_g, diag_cav + m_cav**2)
    if infer_theta:
        from .likelihood import TILT_GRID_NODES, TILT_GRID_HALF_WIDTH
        t = np.linspace(-TILT_GRID_HALF_WIDTH, TILT_GRID_HALF_WIDTH, TILT_GRID_NODES)
        dt = t[1] - t[0]
        theta = th_cav_m[:, None] + np.sqrt(th_cav_v)[:, None] * t[None, :]
        v_y = v_f[:, None] + np.exp(theta) / eta
        log_int = (log_frac_const(theta, eta)
                   - 0.5 * (LOG_2PI + np.log(v_y))
                   - 0.5 * (y[:, None] - m_f[:, None]) ** 2 / v_y
                   - 0.5 * t[None, :] ** 2)
        mx = log_int.max(axis=1)
        log_zhat = mx + np.log(np.sum(np.exp(log_int - mx[:, None]), axis=1)) \
            + math.log(dt) - 0.5 * LOG_2PI
    else:
        v_y = v_f + math.exp(theta_fixed) / eta
        log_zhat = (log_frac_const(theta_fixed, eta)
                    - 0.5 * (LOG_2PI + np.log(v_y)) - 0.5 * (y - m_f) ** 2 / v_y)
    total += float(np.sum(log_zhat)) / eta
    return total

