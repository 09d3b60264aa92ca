import math

import numpy as np
import pytest

from eubovi import (ConfigurationError, ConjugateGaussianModel, DivergentIntegralError,
                    OracleError, VariationalParams)
from eubovi.oracle import (Density1D, QuadratureGrid, finite_diff_gradient, gaussian_kl,
                           gaussian_tilted_moments, posterior_density, quad_alpha_divergence,
                           quad_chi_bound, quad_chi_divergence, quad_elbo, quad_eubo,
                           quad_expectation, quad_kl, quad_renyi_bound)
from eubovi.oracle import testbed_grid as covering_grid

N01 = Density1D.normal(0.0, 1.0)
WIDE = Density1D.normal(0.0, 2.0)
GRID = QuadratureGrid(-25.0, 25.0, 20001)
MODEL = ConjugateGaussianModel()
LOG_EV = -0.5 * math.log(4 * math.pi)


def q(mu, sigma):
    return VariationalParams(np.array([float(mu)]), np.array([math.log(sigma)]))


class TestGrid:
    @pytest.mark.parametrize("args", [(1.0, 0.0, 1001), (0.0, 1.0, 1000), (0.0, 1.0, 999),
                                      (0.0, 1.0, 1001, "trapezoid")])
    def test_invalid(self, args):
        with pytest.raises(ConfigurationError):
            QuadratureGrid(*args)

    def test_simpson_weights_integrate_cubics_exactly(self):
        g = QuadratureGrid(-1.0, 2.0, 1001)
        x = g.points
        assert np.exp(g.log_weights) @ (x**3 - x) == pytest.approx((16 - 1) / 4 - (4 - 1) / 2,
                                                                     abs=1e-12)

    def test_covering(self):
        g = QuadratureGrid.covering([(0.0, 1.0), (3.0, 1.5)])
        assert g.lower == -12.0 and g.upper == 18.0


class TestExpectation:
    def test_normalization(self):
        assert quad_expectation(lambda x: np.ones_like(x), N01, GRID) == pytest.approx(1.0,
                                                                                     abs=1e-10)

    def test_mean(self):
        p = Density1D.normal(3.0, 1.0)
        assert quad_expectation(lambda x: x, p, GRID) == pytest.approx(3.0, abs=1e-8)

    def test_second_moment(self):
        assert quad_expectation(lambda x: x * x, N01, GRID) == pytest.approx(1.0, abs=1e-8)

    def test_non_finite_integrand(self):
        with pytest.raises(OracleError), np.errstate(divide="ignore"):
            quad_expectation(lambda x: 1.0 / x, N01, QuadratureGrid(-1.0, 1.0, 1001))


class TestKL:
    def test_self(self):
        assert abs(quad_kl(N01, N01, GRID)) < 1e-9

    def test_shifted_wider(self):
        value = quad_kl(N01, Density1D.normal(1.0, math.sqrt(2.0)), GRID)
        assert value == pytest.approx(gaussian_kl(0, 1, 1, math.sqrt(2)), abs=1e-10)
        assert value == pytest.approx(0.346574, abs=1e-6)

    def test_wider(self):
        assert quad_kl(N01, WIDE, GRID) == pytest.approx(0.318147, abs=1e-6)

    @pytest.mark.parametrize("m1, s1, m2, s2", [(0.3, 0.7, -1.0, 1.9), (2.0, 1.5, 1.0, 0.8)])
    def test_against_closed_form(self, m1, s1, m2, s2):
        assert quad_kl(Density1D.normal(m1, s1), Density1D.normal(m2, s2),
                       GRID) == pytest.approx(gaussian_kl(m1, s1, m2, s2), abs=1e-9)


class TestAlphaAndChi:
    def test_self(self):
        assert abs(quad_alpha_divergence(N01, N01, -1.0, GRID)) < 1e-12
        assert abs(quad_chi_divergence(N01, N01, 3.0, GRID)) < 1e-12

    def test_alpha_minus_one_closed_form(self):
        # integral of p^2 / q for p = N(0, 1), q = N(0, 2^2) is 4 / sqrt(7)
        expected = 0.5 * math.log(4 / math.sqrt(7))
        value = quad_alpha_divergence(WIDE, N01, -1.0, GRID)
        assert value == pytest.approx(expected, abs=1e-10)
        assert value == pytest.approx(0.2066696, abs=1e-7)
        assert value >= 0.5 * quad_kl(N01, WIDE, GRID)
        assert 0.5 * 0.318147 == pytest.approx(0.159074, abs=1e-6)

    def test_chi_two_equals_alpha_minus_one(self):
        assert quad_chi_divergence(WIDE, N01, 2.0, GRID) == pytest.approx(
            quad_alpha_divergence(WIDE, N01, -1.0, GRID), abs=1e-14)

    def test_continuity_near_zero(self):
        a = quad_alpha_divergence(WIDE, N01, -0.01, GRID)
        b = quad_alpha_divergence(WIDE, N01, -0.001, GRID)
        assert abs(a - b) < 0.05

    def test_light_tailed_proposal_diverges(self):
        # q = N(0, 1), p = N(0, 2^2): 2 / sigma_p^2 - 1 / sigma_q^2 < 0
        with pytest.raises(DivergentIntegralError):
            quad_chi_divergence(N01, WIDE, 2.0, GRID)

    def test_boundary_of_existence(self):
        # sigma_q^2 slightly above sigma_p^2 / 2 is finite
        value = quad_chi_divergence(Density1D.normal(0, math.sqrt(0.55)), N01, 2.0, GRID)
        assert np.isfinite(value)

    def test_invalid_orders(self):
        with pytest.raises(ConfigurationError):
            quad_alpha_divergence(N01, N01, 1.0, GRID)
        with pytest.raises(ConfigurationError):
            quad_chi_divergence(N01, N01, 1.0, GRID)

    def test_tilted_moments(self):
        mean, std = gaussian_tilted_moments((0.0, 1.0), (1.0, 2.0), 2.0)
        precision = 2 / 1 - 1 / 4
        assert std == pytest.approx(precision**-0.5)
        assert mean == pytest.approx((-1 * 1 / 4) / precision)
        assert gaussian_tilted_moments((0.0, 2.0), (0.0, 1.0), 2.0) is None


class TestBounds:
    def test_posterior_gives_evidence(self):
        post = q(0.0, math.sqrt(0.5))
        grid = covering_grid(MODEL, post)
        assert quad_eubo(MODEL, post, grid) == pytest.approx(LOG_EV, abs=1e-10)
        assert quad_elbo(MODEL, post, grid) == pytest.approx(LOG_EV, abs=1e-10)
        assert quad_renyi_bound(MODEL, post, -1.0, grid) == pytest.approx(LOG_EV, abs=1e-10)

    @pytest.mark.parametrize("mu, sigma", [(0.5, 1.0), (-1.0, 0.6), (0.2, 2.0)])
    def test_identities(self, mu, sigma):
        params = q(mu, sigma)
        grid = covering_grid(MODEL, params)
        eubo = quad_eubo(MODEL, params, grid)
        elbo = quad_elbo(MODEL, params, grid)
        assert eubo == pytest.approx(LOG_EV + gaussian_kl(0, math.sqrt(0.5), mu, sigma),
                                     abs=1e-8)
        assert elbo == pytest.approx(LOG_EV - gaussian_kl(mu, sigma, 0, math.sqrt(0.5)),
                                     abs=1e-8)
        assert eubo >= LOG_EV >= elbo

    def test_canonical_q_identity_against_quadrature_kl(self):
        params = q(0.5, 1.0)
        grid = covering_grid(MODEL, params)
        kl = quad_kl(posterior_density(MODEL), Density1D.from_params(params), grid)
        assert quad_eubo(MODEL, params, grid) == pytest.approx(-1.265512 + kl, abs=1e-6)
        assert quad_eubo(MODEL, params, grid) == pytest.approx(LOG_EV + kl, abs=1e-8)

    def test_chi_bound_against_direct_integral(self):
        params = q(0.5, 1.0)
        grid = covering_grid(MODEL, params, powers=(2.0,))
        # p(D, theta) = evidence * post(theta), so the bound is log p(D) + (1/2) log int post^2/q
        post = (0.0, math.sqrt(0.5))
        x = grid.points
        dens = Density1D.normal(*post).log_density(x)
        lq = Density1D.from_params(params).log_density(x)
        from scipy.integrate import simpson
        direct = math.log(simpson(np.exp(2 * dens - lq), x=x))
        assert quad_chi_bound(MODEL, params, 2.0, grid) == pytest.approx(
            LOG_EV + direct / 2, abs=1e-9)

    def test_renyi_bound_refuses_divergent_tilt(self):
        with pytest.raises(DivergentIntegralError):
            quad_renyi_bound(MODEL, q(0.0, 0.3), -2.0, QuadratureGrid(-5, 5, 1001))

    def test_renyi_bound_alpha_one(self):
        with pytest.raises(ConfigurationError):
            quad_renyi_bound(MODEL, q(0.0, 1.0), 1.0, GRID)


class TestFiniteDifferences:
    def test_quadratic(self):
        assert np.allclose(finite_diff_gradient(lambda v: np.sum(v**2), [1.0, 2.0], 1e-5),
                           [2.0, 4.0], atol=1e-6)

    def test_kl_gradient_against_closed_form(self):
        post = Density1D.normal(0.0, math.sqrt(0.5))
        grid = QuadratureGrid(-15.0, 15.0, 20001)

        def kl(lam):
            return quad_kl(post, Density1D.normal(lam[0], math.exp(lam[1])), grid)

        # d/dmu = (mu - m1) / s2^2, d/dlog s2 = 1 - (s1^2 + (m1 - mu)^2) / s2^2
        expected = [0.5, 1.0 - (0.5 + 0.25)]
        assert np.allclose(finite_diff_gradient(kl, [0.5, 0.0]), expected, atol=1e-5)

    def test_step_robustness(self):
        post = Density1D.normal(0.0, math.sqrt(0.5))

        def kl(lam):
            return quad_kl(post, Density1D.normal(lam[0], math.exp(lam[1])), GRID)

        a = finite_diff_gradient(kl, [0.5, 0.0], 1e-4)
        b = finite_diff_gradient(kl, [0.5, 0.0], 1e-6)
        assert np.allclose(a, b, rtol=1e-4)
