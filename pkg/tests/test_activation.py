import math

import numpy as np
import pytest
from scipy.special import erf

from epnn.activation import activation_moments, g, mean_g, var_g


class TestG:
    @pytest.mark.parametrize("K", [1, 4, 10])
    def test_odd_at_zero(self, K):
        assert g(0.0, K) == 0.0
        np.testing.assert_allclose(g(np.array([-1.3, 1.3]), K).sum(), 0.0, atol=1e-16)

    def test_unit_value(self):
        assert g(1.0, 1) == pytest.approx(erf(1 / math.sqrt(2)))
        assert g(1.0, 1) == pytest.approx(0.6826894921, abs=1e-9)

    def test_saturation(self):
        assert g(40.0, 4) == pytest.approx(0.5, abs=1e-12)

    def test_monotone(self):
        x = np.linspace(-4, 4, 101)
        assert np.all(np.diff(g(x, 3)) > 0)


class TestMeanG:
    def test_zero_mean_symmetry(self):
        for v in (0.0, 0.5, 10.0):
            assert mean_g(0.0, v, 3) == 0.0

    def test_zero_variance_degenerates_to_g(self):
        assert mean_g(1.0, 0.0, 1) == pytest.approx(g(1.0, 1), abs=1e-14)

    def test_monte_carlo(self):
        rng = np.random.default_rng(11)
        h = 1.0 + rng.standard_normal(1_000_000)
        samples = g(h, 1)
        se = samples.std() / 1000.0
        assert mean_g(1.0, 1.0, 1) == pytest.approx(samples.mean(), abs=3 * se)


class TestVarG:
    def test_zero_variance(self):
        assert var_g(0.7, 0.0, 2) == 0.0

    def test_saturation_limit(self):
        assert var_g(0.0, 1e9, 1) == pytest.approx(1.0, rel=1e-4)

    def test_monte_carlo(self):
        rng = np.random.default_rng(12)
        h = 0.5 + math.sqrt(2.0) * rng.standard_normal(1_000_000)
        samples = g(h, 1)
        sec = (samples - samples.mean()) ** 2
        se = sec.std() / 1000.0
        assert var_g(0.5, 2.0, 1) == pytest.approx(samples.var(), abs=3 * se)


class TestInvariants:
    def test_total_variance_bound(self):
        # E[g]^2 + Var[g] = E[g^2] <= 1/K
        for K in (1, 5):
            for m in np.linspace(-3, 3, 7):
                for v in (0.0, 0.2, 1.0, 4.0, 50.0):
                    total = mean_g(m, v, K) ** 2 + var_g(m, v, K)
                    assert total <= 1.0 / K + 1e-12

    def test_mean_odd_and_decreasing_in_v(self):
        for m in (0.5, 1.0, 2.5):
            vals = [mean_g(m, v, 2) for v in (0.0, 0.5, 1.0, 2.0, 8.0)]
            assert all(a > b for a, b in zip(vals, vals[1:]))
            for v in (0.0, 0.5, 3.0):
                assert mean_g(-m, v, 2) == pytest.approx(-mean_g(m, v, 2), abs=1e-16)

    def test_batch_matches_scalars(self):
        m = np.array([-1.0, 0.0, 2.0])
        v = np.array([0.3, 1.0, 0.0])
        means, varis = activation_moments(m, v, 4)
        for j in range(3):
            assert means[j] == pytest.approx(mean_g(m[j], v[j], 4), abs=1e-15)
            assert varis[j] == pytest.approx(var_g(m[j], v[j], 4), abs=1e-15)
