import math

import numpy as np
import pytest
from scipy.integrate import simpson

from epnn.activation import activation_moments
from epnn.exceptions import CavityCollapse, SkippedUpdate
from epnn.gaussians import Gaussian1D, GaussianDense, NaturalSite1D, cavity_scalar
from epnn.likelihood import (CavityBundle, cavity_v, predictive_f_moments,
                             site_update_scalar, site_update_v, tilted_h,
                             tilted_h_all, tilted_theta, tilted_theta_fixed,
                             tilted_v, visit_site)

from oracles import TiltedOracle, g_act, log_normal_pdf


def make_cavity(rng, K, h_var_range=(0.003, 0.02), v_diag=(0.005, 0.05),
                v_off=0.03, v_mean_range=(0.3, 1.0)):
    """Unimodal-regime cavities: tight activations, noise-dominated output."""
    h_mean = rng.uniform(-1.5, 1.5, K)
    h_var = rng.uniform(*h_var_range, K)
    v_mean = np.concatenate([rng.uniform(*v_mean_range, K), rng.uniform(-0.4, 0.4, 1)])
    A = rng.standard_normal((K + 1, K + 1)) * v_off
    v_cov = A @ A.T + np.diag(rng.uniform(*v_diag, K + 1))
    return h_mean, h_var, v_mean, v_cov


class TestCavityV:
    def test_empty_site_returns_q(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((3, 3))
        q = GaussianDense(rng.standard_normal(3), A @ A.T + 3 * np.eye(3))
        cav = cavity_v(q, np.zeros(3), np.zeros(3), 0.9)
        np.testing.assert_allclose(cav.mean, q.mean, atol=1e-14)
        np.testing.assert_allclose(cav.cov, q.cov, atol=1e-14)

    def test_scalar_reduction(self):
        q = GaussianDense(np.array([1.0]), np.array([[0.5]]))
        cav = cavity_v(q, np.array([1.0]), np.array([1.0]), 1.0)
        # alpha alpha' contributes tau = 1 in one dimension
        ref = cavity_scalar(Gaussian1D(1.0, 0.5), NaturalSite1D(1.0, 1.0), 1.0)
        assert cav.mean[0] == pytest.approx(ref.mean, rel=1e-12)
        assert cav.cov[0, 0] == pytest.approx(ref.var, rel=1e-12)

    def test_matches_dense_subtraction(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 3))
        cov = A @ A.T + 3 * np.eye(3)
        mean = rng.standard_normal(3)
        alpha = 0.4 * rng.standard_normal(3)
        nuv = rng.standard_normal(3)
        eta = 0.9
        cav = cavity_v(GaussianDense(mean, cov), alpha, nuv, eta)
        prec = np.linalg.inv(cov) - eta * np.outer(alpha, alpha)
        ref_cov = np.linalg.inv(prec)
        ref_mean = ref_cov @ (np.linalg.solve(cov, mean) - eta * nuv)
        np.testing.assert_allclose(cav.cov, ref_cov, atol=1e-10)
        np.testing.assert_allclose(cav.mean, ref_mean, atol=1e-10)

    def test_collapse(self):
        q = GaussianDense(np.zeros(2), np.eye(2))
        with pytest.raises(CavityCollapse):
            cavity_v(q, np.array([2.0, 0.0]), np.zeros(2), 1.0)


class TestPredictiveFMoments:
    def test_deterministic_activations(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((3, 3))
        v = GaussianDense(rng.standard_normal(3), A @ A.T + np.eye(3))
        m_g = np.array([0.3, -0.2, 1.0])
        m_f, v_f, cross = predictive_f_moments(v, m_g, np.zeros(3))
        assert m_f == pytest.approx(float(v.mean @ m_g))
        assert v_f == pytest.approx(float(m_g @ v.cov @ m_g))
        np.testing.assert_allclose(cross, v.cov @ m_g)

    def test_hand_scalars(self):
        # K=1, all ones where defined: m=[1,1], S=I, m_g=[1,1], v_g=[1,0]
        v = GaussianDense(np.ones(2), np.eye(2))
        m_f, v_f, cross = predictive_f_moments(v, np.ones(2), np.array([1.0, 0.0]))
        assert m_f == pytest.approx(2.0)
        # m_g'Sm_g = 2; v_g'(diag+m^2) = 1*(1+1) = 2
        assert v_f == pytest.approx(4.0)
        np.testing.assert_allclose(cross, np.ones(2))

    def test_monte_carlo(self):
        rng = np.random.default_rng(3)
        K = 2
        h_mean, h_var, v_mean, v_cov = make_cavity(rng, K, h_var_range=(0.05, 0.3))
        m_g = np.ones(K + 1)
        v_g = np.zeros(K + 1)
        m_g[:K], v_g[:K] = activation_moments(h_mean, h_var, K)
        v = GaussianDense(v_mean, v_cov)
        m_f, v_f, _ = predictive_f_moments(v, m_g, v_g)
        M = 1_000_000
        hs = h_mean + np.sqrt(h_var) * rng.standard_normal((M, K))
        vs = rng.multivariate_normal(v_mean, v_cov, size=M)
        G = np.column_stack([g_act(hs[:, k], K) for k in range(K)] + [np.ones(M)])
        f = np.einsum("mc,mc->m", G, vs)
        se_mean = f.std() / math.sqrt(M)
        assert m_f == pytest.approx(f.mean(), abs=3 * se_mean)
        se_var = ((f - f.mean()) ** 2).std() / math.sqrt(M)
        assert v_f == pytest.approx(f.var(), abs=3 * se_var)


class TestTiltedTheta:
    def test_point_mass_cavity_reduces_to_fixed(self):
        theta0 = math.log(0.3)
        m_f, v_f, y, eta = 0.4, 0.2, 0.9, 1.0
        log_z, t_mean, t_var, a_hat, b_hat = tilted_theta(
            m_f, v_f, y, Gaussian1D(theta0, 1e-12), eta)
        ref_logz, ref_a, ref_b = tilted_theta_fixed(m_f, v_f, y, theta0, eta)
        assert log_z == pytest.approx(ref_logz, abs=1e-8)
        assert a_hat == pytest.approx(ref_a, rel=1e-8)
        assert b_hat == pytest.approx(ref_b, rel=1e-8)
        assert t_mean == pytest.approx(theta0, abs=1e-6)

    def test_zero_residual_shifts_theta_down(self):
        cav = Gaussian1D(math.log(0.2), 0.5)
        _, t_mean, _, _, _ = tilted_theta(0.0, 0.3, 0.0, cav, 1.0)
        assert t_mean < cav.mean

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_fine_grid(self, seed):
        rng = np.random.default_rng(seed)
        m_f = rng.uniform(-1, 1)
        v_f = rng.uniform(0.05, 0.5)
        y = m_f + rng.uniform(-2, 2)
        eta = rng.uniform(0.6, 1.0)
        cav = Gaussian1D(rng.uniform(-4, 0), rng.uniform(0.2, 2.0))
        log_z, t_mean, t_var, a_hat, b_hat = tilted_theta(m_f, v_f, y, cav, eta)
        # reference on an independent very fine grid
        th = cav.mean + math.sqrt(cav.var) * np.linspace(-10, 10, 20001)
        v_y = v_f + np.exp(th) / eta
        log_c = 0.5 * (1 - eta) * (math.log(2 * math.pi) + th) - 0.5 * math.log(eta)
        lw = log_c + log_normal_pdf(y, m_f, v_y) + log_normal_pdf(th, cav.mean, cav.var)
        w = np.exp(lw - lw.max())
        z = simpson(w, x=th)
        ref_logz = math.log(z) + lw.max()
        ref_mean = simpson(w * th, x=th) / z
        ref_var = simpson(w * (th - ref_mean) ** 2, x=th) / z
        r = 1.0 / v_y
        r_mean = simpson(w * r, x=th) / z
        r_var = simpson(w * (r - r_mean) ** 2, x=th) / z
        assert log_z == pytest.approx(ref_logz, abs=1e-6)
        assert t_mean == pytest.approx(ref_mean, abs=1e-6)
        assert t_var == pytest.approx(ref_var, abs=1e-6)
        assert b_hat == pytest.approx(r_mean, abs=1e-6)
        assert a_hat == pytest.approx(r_mean - (y - m_f) ** 2 * r_var, abs=1e-6)


class TestTiltedV:
    def test_zero_residual_keeps_mean(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((3, 3))
        cav = GaussianDense(rng.standard_normal(3), A @ A.T + np.eye(3))
        cross = cav.cov @ np.array([0.3, 0.6, 1.0])
        v_mean, _ = tilted_v(cav, cross, y=0.5, m_f=0.5, a_hat=1.3, b_hat=1.3)
        np.testing.assert_allclose(v_mean, cav.mean)

    def test_kalman_conditioning_k1(self):
        # fixed theta: conditioning the joint Gaussian of (v, f) on y
        rng = np.random.default_rng(5)
        K = 1
        h_mean, h_var, v_mean, v_cov = make_cavity(rng, K)
        m_g = np.ones(K + 1)
        v_g = np.zeros(K + 1)
        m_g[:K], v_g[:K] = activation_moments(h_mean, h_var, K)
        cav = GaussianDense(v_mean, v_cov)
        m_f, v_f, cross = predictive_f_moments(cav, m_g, v_g)
        s2 = 0.3
        y = m_f + 0.7
        log_z, a_hat, b_hat = tilted_theta_fixed(m_f, v_f, y, math.log(s2), 1.0)
        got_mean, got_cov = tilted_v(cav, cross, y, m_f, a_hat, b_hat)
        v_y = v_f + s2
        ref_mean = v_mean + cross * (y - m_f) / v_y
        ref_cov = v_cov - np.outer(cross, cross) / v_y
        np.testing.assert_allclose(got_mean, ref_mean, atol=1e-12)
        np.testing.assert_allclose(got_cov, ref_cov, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_exact_tilted_k2(self, seed):
        rng = np.random.default_rng(100 + seed)
        K = 2
        h_mean, h_var, v_mean, v_cov = make_cavity(rng, K)
        theta = math.log(rng.uniform(0.3, 0.8))
        cav = CavityBundle(h_mean=h_mean, h_var=h_var,
                           v=GaussianDense(v_mean, v_cov), theta=None)
        m_g = np.ones(K + 1)
        v_g = np.zeros(K + 1)
        m_g[:K], v_g[:K] = activation_moments(h_mean, h_var, K)
        m_f, v_f, _ = predictive_f_moments(cav.v, m_g, v_g)
        y = m_f + rng.uniform(-0.8, 0.8) * math.sqrt(v_f + math.exp(theta))
        til = visit_site(y, cav, K, 1.0, theta)
        orc = TiltedOracle(h_mean, h_var, v_mean, v_cov, y, theta, 1.0, n_nodes=501)
        vm, vc = orc.v_moments()
        np.testing.assert_allclose(til.v_mean, vm, atol=1e-3)
        np.testing.assert_allclose(til.v_cov, vc, atol=1e-3)


class TestTiltedH:
    def test_disconnected_unit_keeps_cavity(self):
        # output weight with zero cavity mean and variance: no influence on f
        K = 2
        h_mean = np.array([0.2, -0.4])
        h_var = np.array([0.3, 0.2])
        v_mean = np.array([0.0, 0.8, 0.1])
        v_cov = np.diag([0.0, 0.2, 0.05])
        cav = CavityBundle(h_mean=h_mean, h_var=h_var,
                           v=GaussianDense(v_mean, v_cov), theta=None)
        m_g = np.ones(K + 1)
        v_g = np.zeros(K + 1)
        m_g[:K], v_g[:K] = activation_moments(h_mean, h_var, K)
        m_f, v_f, cross = predictive_f_moments(cav.v, m_g, v_g)
        mean, var, ok = tilted_h_all(cav, m_g, v_g, cross, m_f, v_f, y=0.7,
                                     theta_star=math.log(0.1), eta=1.0)
        assert ok[0]
        assert mean[0] == pytest.approx(h_mean[0], abs=1e-10)
        assert var[0] == pytest.approx(h_var[0], rel=1e-9)

    def test_k1_matches_exact_grid(self):
        rng = np.random.default_rng(6)
        K = 1
        h_mean, h_var, v_mean, v_cov = make_cavity(rng, K, h_var_range=(0.05, 0.3))
        theta = math.log(0.2)
        y = 0.9
        cav = CavityBundle(h_mean=h_mean, h_var=h_var,
                           v=GaussianDense(v_mean, v_cov), theta=None)
        til = visit_site(y, cav, K, 1.0, theta)
        orc = TiltedOracle(h_mean, h_var, v_mean, v_cov, y, theta, 1.0, n_nodes=4001)
        hm, hv = orc.h_moments()
        # K=1 conditional output moments are exact, so only grid error remains
        assert til.h_mean[0] == pytest.approx(hm[0], abs=1e-9)
        assert til.h_var[0] == pytest.approx(hv[0], abs=1e-9)

    def test_bimodal_matches_fine_grid_and_inflates_variance(self):
        # y far from the cavity prediction; the large output-weight variance
        # makes the likelihood lenient at large |h|, so both tails fit y
        K = 1
        h_var = 0.106
        cav = CavityBundle(h_mean=np.array([0.0]), h_var=np.array([h_var]),
                           v=GaussianDense(np.array([0.5, 0.0]),
                                           np.diag([2.895, 0.01])), theta=None)
        y, s2 = 2.908, 0.0061
        til = visit_site(y, cav, K, 1.0, math.log(s2))
        # independent 2000-point fine-grid reference
        h = math.sqrt(h_var) * np.linspace(-8, 8, 2000)
        G = np.column_stack([g_act(h, K), np.ones(2000)])
        pm = G @ cav.v.mean
        pv = np.einsum("nc,cd,nd->n", G, cav.v.cov, G) + s2
        lw = log_normal_pdf(y, pm, pv) + log_normal_pdf(h, 0.0, h_var)
        w = np.exp(lw - lw.max())
        z = simpson(w, x=h)
        ref_mean = simpson(w * h, x=h) / z
        ref_var = simpson(w * (h - ref_mean) ** 2, x=h) / z
        d = np.diff(w)
        peaks = [p for p in np.where((d[:-1] > 0) & (d[1:] <= 0))[0] if w[p] > 0.02]
        assert len(peaks) >= 2  # genuinely multimodal
        assert til.h_mean[0] == pytest.approx(ref_mean, abs=1e-6)
        assert til.h_var[0] == pytest.approx(ref_var, abs=1e-6)
        assert til.h_var[0] > h_var

    def test_single_unit_wrapper(self):
        rng = np.random.default_rng(7)
        K = 2
        h_mean, h_var, v_mean, v_cov = make_cavity(rng, K)
        cav = CavityBundle(h_mean=h_mean, h_var=h_var,
                           v=GaussianDense(v_mean, v_cov), theta=None)
        m_g = np.ones(K + 1)
        v_g = np.zeros(K + 1)
        m_g[:K], v_g[:K] = activation_moments(h_mean, h_var, K)
        m, v = tilted_h(1, cav, m_g, v_g, y=0.4, theta_star=math.log(0.3), eta=1.0)
        til = visit_site(0.4, cav, K, 1.0, math.log(0.3))
        assert m == pytest.approx(til.h_mean[1])
        assert v == pytest.approx(til.h_var[1])


class TestSiteUpdateScalar:
    def test_fixed_point(self):
        site = NaturalSite1D(0.4, -0.1)
        out = site_update_scalar(0.3, 0.8, Gaussian1D(0.3, 0.8), site, 0.9, 0.7)
        assert out.tau == pytest.approx(site.tau)
        assert out.nu == pytest.approx(site.nu)

    def test_direct_formula(self):
        out = site_update_scalar(0.5, 0.5, Gaussian1D(0.0, 1.0),
                                 NaturalSite1D(0.0, 0.0), 1.0, 1.0)
        assert out.tau == pytest.approx(1.0)
        assert out.nu == pytest.approx(1.0)

    def test_damping_linearity(self):
        full = site_update_scalar(0.5, 0.5, Gaussian1D(0.0, 1.0),
                                  NaturalSite1D(0.0, 0.0), 1.0, 1.0)
        half = site_update_scalar(0.5, 0.5, Gaussian1D(0.0, 1.0),
                                  NaturalSite1D(0.0, 0.0), 1.0, 0.5)
        assert half.tau == pytest.approx(0.5 * full.tau)
        assert half.nu == pytest.approx(0.5 * full.nu)


class TestSiteUpdateV:
    def _setup(self, rng, dim=3):
        A = rng.standard_normal((dim, dim))
        cav = GaussianDense(rng.standard_normal(dim), A @ A.T + dim * np.eye(dim))
        m_g = np.concatenate([rng.uniform(0.1, 0.6, dim - 1), [1.0]])
        # consistent inverse predictive variance: V_y >= m_g'S m_g always
        q = float(m_g @ cav.cov @ m_g)
        v_y = q * rng.uniform(1.05, 1.5) + rng.uniform(0.05, 0.5)
        a_hat = 1.0 / v_y
        b_hat = a_hat * rng.uniform(0.9, 1.1)
        y = rng.uniform(-1, 1)
        m_f = float(cav.mean @ m_g) + rng.uniform(-0.3, 0.3)
        return cav, m_g, a_hat, b_hat, y, m_f

    def test_no_damping_recovers_undamped(self):
        rng = np.random.default_rng(8)
        cav, m_g, a_hat, b_hat, y, m_f = self._setup(rng)
        alpha_old = rng.standard_normal(3)
        nuv_old = rng.standard_normal(3)
        alpha, nuv = site_update_v(cav, m_g, a_hat, b_hat, y, m_f,
                                   alpha_old, nuv_old, 1.0, 1.0)
        q = float(m_g @ cav.cov @ m_g)
        denom = 1.0 - a_hat * q
        alpha_ref = m_g * math.sqrt(a_hat / denom)
        nuv_ref = m_g * ((a_hat * float(m_g @ cav.mean) + b_hat * (y - m_f)) / denom)
        np.testing.assert_allclose(np.outer(alpha, alpha),
                                   np.outer(alpha_ref, alpha_ref), atol=1e-12)
        np.testing.assert_allclose(nuv, nuv_ref, atol=1e-12)

    def test_stationary_site(self):
        rng = np.random.default_rng(9)
        cav, m_g, a_hat, b_hat, y, m_f = self._setup(rng)
        alpha, nuv = site_update_v(cav, m_g, a_hat, b_hat, y, m_f,
                                   np.zeros(3), np.zeros(3), 1.0, 1.0)
        for delta in (0.3, 0.7):
            a2, n2 = site_update_v(cav, m_g, a_hat, b_hat, y, m_f, alpha, nuv,
                                   1.0, delta)
            np.testing.assert_allclose(np.outer(a2, a2), np.outer(alpha, alpha),
                                       atol=1e-10)
            np.testing.assert_allclose(n2, nuv, atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_rank2_posterior_mean_exact(self, seed):
        # the collapsed rank-1 site reproduces the rank-2 damped posterior mean
        rng = np.random.default_rng(200 + seed)
        cav, m_g, a_hat, b_hat, y, m_f = self._setup(rng)
        alpha_old = 0.5 * rng.standard_normal(3)
        nuv_old = 0.5 * rng.standard_normal(3)
        eta, delta = 0.9, 0.4
        alpha, nuv = site_update_v(cav, m_g, a_hat, b_hat, y, m_f,
                                   alpha_old, nuv_old, eta, delta)
        q = float(m_g @ cav.cov @ m_g)
        denom = 1.0 - a_hat * q
        alpha_new = m_g * math.sqrt(a_hat / denom / eta)
        nuv_new = m_g * ((a_hat * float(m_g @ cav.mean)
                          + b_hat * (y - m_f)) / denom / eta)
        A = np.column_stack([math.sqrt(1 - delta) * alpha_old,
                             math.sqrt(delta) * alpha_new])
        b = (1 - delta) * nuv_old + delta * nuv_new
        prec_cav = np.linalg.inv(cav.cov)
        mean_rank2 = np.linalg.solve(prec_cav + eta * A @ A.T,
                                     prec_cav @ cav.mean + eta * b)
        mean_rank1 = np.linalg.solve(prec_cav + eta * np.outer(alpha, alpha),
                                     prec_cav @ cav.mean + eta * nuv)
        np.testing.assert_allclose(mean_rank1, mean_rank2, atol=1e-10)

    def test_sign_convention(self):
        rng = np.random.default_rng(10)
        cav, m_g, a_hat, b_hat, y, m_f = self._setup(rng)
        alpha, _ = site_update_v(cav, m_g, a_hat, b_hat, y, m_f,
                                 rng.standard_normal(3), rng.standard_normal(3),
                                 1.0, 0.5)
        nz = np.nonzero(np.abs(alpha) > 0)[0]
        assert alpha[nz[0]] > 0

    def test_skipped_update(self):
        # inconsistent a_hat (only reachable through numerical error) is refused
        rng = np.random.default_rng(11)
        cav, m_g, _, b_hat, y, m_f = self._setup(rng)
        q = float(m_g @ cav.cov @ m_g)
        with pytest.raises(SkippedUpdate):
            site_update_v(cav, m_g, 2.0 / q, b_hat, y, m_f, np.zeros(3),
                          np.zeros(3), 1.0, 1.0)


class TestFixedThetaConsistency:
    def test_point_mass_theta_reproduces_fixed_path(self):
        rng = np.random.default_rng(12)
        K = 2
        h_mean, h_var, v_mean, v_cov = make_cavity(rng, K)
        theta0 = math.log(0.25)
        y = 0.8
        cav_fixed = CavityBundle(h_mean=h_mean, h_var=h_var,
                                 v=GaussianDense(v_mean, v_cov), theta=None)
        til_fixed = visit_site(y, cav_fixed, K, 1.0, theta0)
        cav_point = CavityBundle(h_mean=h_mean, h_var=h_var,
                                 v=GaussianDense(v_mean, v_cov),
                                 theta=Gaussian1D(theta0, 1e-12))
        til_point = visit_site(y, cav_point, K, 1.0, None)
        assert til_point.log_zhat == pytest.approx(til_fixed.log_zhat, abs=1e-8)
        np.testing.assert_allclose(til_point.v_mean, til_fixed.v_mean, atol=1e-8)
        np.testing.assert_allclose(til_point.v_cov, til_fixed.v_cov, atol=1e-8)
        np.testing.assert_allclose(til_point.h_mean, til_fixed.h_mean, atol=1e-8)
        np.testing.assert_allclose(til_point.h_var, til_fixed.h_var, atol=1e-8)
