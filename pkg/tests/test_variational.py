import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eubovi import (ConfigurationError, NoiseDraw, VariationalParams, grad_logq_wrt_lambda,
                    log_density_q, reparameterize)
from eubovi.oracle import Density1D, QuadratureGrid, finite_diff_gradient


def params(mu, log_sigma):
    return VariationalParams(np.array(mu, dtype=float), np.array(log_sigma, dtype=float))


class TestVariationalParams:
    def test_flatten_round_trip(self):
        p = params([1.0, -2.0], [0.1, 0.2])
        assert np.array_equal(p.flatten(), [1.0, -2.0, 0.1, 0.2])
        back = VariationalParams.from_flat(p.flatten())
        assert np.array_equal(back.mu, p.mu) and np.array_equal(back.log_sigma, p.log_sigma)

    def test_arrays_are_read_only(self):
        p = params([0.0], [0.0])
        with pytest.raises(ValueError):
            p.mu[0] = 1.0

    @pytest.mark.parametrize("mu, ls", [([], []), ([0.0, 1.0], [0.0]), ([np.nan], [0.0]),
                                        ([0.0], [np.inf])])
    def test_rejects_bad_shapes_and_values(self, mu, ls):
        with pytest.raises(ConfigurationError):
            params(mu, ls)

    def test_odd_flat_vector_rejected(self):
        with pytest.raises(ConfigurationError):
            VariationalParams.from_flat(np.zeros(3))

    def test_initial_defaults(self):
        p = VariationalParams.initial(4)
        assert np.all(p.mu == 0.0)
        assert np.all(p.log_sigma == -2.3)

    def test_random_initial_needs_rng(self):
        with pytest.raises(ConfigurationError):
            VariationalParams.initial(3, mu_std=0.1)
        a = VariationalParams.initial(3, mu_std=0.1, rng=np.random.default_rng(1))
        b = VariationalParams.initial(3, mu_std=0.1, rng=np.random.default_rng(1))
        assert np.array_equal(a.mu, b.mu)


class TestNoiseDraw:
    def test_seeded_draws_replay(self):
        a = NoiseDraw.from_seed(7, 5, 3)
        b = NoiseDraw.from_seed(a.seed_record, 5, 3)
        assert np.array_equal(a.epsilon, b.epsilon)

    def test_from_rng_records_seed(self):
        a = NoiseDraw.from_rng(np.random.default_rng(0), 4, 2)
        assert np.array_equal(NoiseDraw.from_seed(a.seed_record, 4, 2).epsilon, a.epsilon)

    def test_vector_is_promoted_to_column(self):
        assert NoiseDraw(np.array([0.1, 0.2])).epsilon.shape == (2, 1)

    def test_zero_particles_rejected(self):
        with pytest.raises(ConfigurationError):
            NoiseDraw.from_seed(0, 0, 2)


class TestReparameterize:
    def test_definition(self):
        out = reparameterize(params([1.0], [math.log(2.0)]), NoiseDraw(np.array([[0.5]])))
        assert np.allclose(out, [[2.0]])

    def test_zero_noise_returns_mean(self):
        p = params([0.3, -0.7], [1.0, -1.0])
        assert np.array_equal(reparameterize(p, NoiseDraw(np.zeros((4, 2)))),
                              np.tile(p.mu, (4, 1)))

    def test_unit_sigma(self):
        out = reparameterize(params([0.0, 1.0], [0.0, 0.0]), NoiseDraw(np.array([[1.0, -1.0]])))
        assert np.array_equal(out, [[1.0, 0.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            reparameterize(params([0.0], [0.0]), NoiseDraw(np.zeros((2, 3))))


class TestLogDensity:
    def test_standard_normal_origin(self):
        assert log_density_q(params([0.0], [0.0]), np.array([0.0])) == pytest.approx(-0.918939,
                                                                                   abs=1e-6)

    def test_two_dimensional_origin(self):
        assert log_density_q(params([0.0, 0.0], [0.0, 0.0]), np.zeros(2)) == pytest.approx(
            -1.837877, abs=1e-6)

    def test_shifted_scaled(self):
        # mu=1, sigma=2, theta=3: -0.5 ln(2 pi) - ln 2 - 0.5
        value = log_density_q(params([1.0], [math.log(2.0)]), np.array([3.0]))
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi) - math.log(2.0) - 0.5,
                                      abs=1e-12)
        assert value == pytest.approx(-2.112086, abs=1e-6)

    def test_normalizes_under_quadrature(self):
        p = params([1.0], [math.log(2.0)])
        grid = QuadratureGrid(-19.0, 21.0, 10001)
        density = Density1D(lambda x: log_density_q(p, np.asarray(x)[:, None]))
        assert density.normalization(grid) == pytest.approx(1.0, abs=1e-8)

    def test_batch_returns_vector(self):
        out = log_density_q(params([0.0], [0.0]), np.zeros((3, 1)))
        assert out.shape == (3,)


class TestScore:
    def test_at_mean(self):
        g_mu, g_ls = grad_logq_wrt_lambda(params([0.5, -1.0], [0.2, 0.3]), np.array([0.5, -1.0]))
        assert np.array_equal(g_mu, [0.0, 0.0])
        assert np.array_equal(g_ls, [-1.0, -1.0])

    def test_one_sigma_away(self):
        p = params([0.5, -1.0], [0.2, 0.3])
        _, g_ls = grad_logq_wrt_lambda(p, p.mu + p.sigma)
        assert np.allclose(g_ls, 0.0, atol=1e-12)

    def test_matches_finite_differences(self):
        theta = np.array([3.0])
        g_mu, g_ls = grad_logq_wrt_lambda(params([1.0], [0.0]), theta)
        assert np.allclose([g_mu[0], g_ls[0]], [2.0, 3.0])
        fd = finite_diff_gradient(
            lambda lam: log_density_q(VariationalParams.from_flat(lam), theta),
            np.array([1.0, 0.0]))
        assert np.allclose(fd, [2.0, 3.0], atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-2, 1), st.floats(-5, 5))
    def test_finite_differences_random(self, mu, ls, theta):
        g_mu, g_ls = grad_logq_wrt_lambda(params([mu], [ls]), np.array([theta]))
        fd = finite_diff_gradient(
            lambda lam: log_density_q(VariationalParams.from_flat(lam), np.array([theta])),
            np.array([mu, ls]))
        scale = max(1.0, abs(g_mu[0]), abs(g_ls[0]))
        assert np.allclose(fd, [g_mu[0], g_ls[0]], atol=1e-5 * scale)
