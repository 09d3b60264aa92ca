import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eubovi import (BoundObjective, ConfigurationError, ConjugateGaussianModel, DataBatch,
                    DegenerateWeightsError, InputError, NoiseDraw, ObjectiveKind,
                    ParticleBatch, VariationalParams, draw_particles, effective_sample_size,
                    estimate_bound, estimate_log_evidence, log_joint_minibatch, log_mean_exp,
                    normalize_weights)
from eubovi.oracle import quad_eubo, testbed_grid as covering_grid

LOG_EV = -0.5 * math.log(4.0 * math.pi)
MODEL = ConjugateGaussianModel()
POSTERIOR_Q = VariationalParams(np.array([0.0]), np.array([0.5 * math.log(0.5)]))


def q(mu, sigma):
    return VariationalParams(np.array([float(mu)]), np.array([math.log(sigma)]))


def particles(params, m, seed):
    return draw_particles(MODEL, MODEL.data(), params, NoiseDraw.from_seed(seed, m, 1), 1)


def from_log_omega(x):
    x = np.asarray(x, dtype=float)
    return ParticleBatch.from_log_terms(np.zeros((x.size, 1)), x, np.zeros_like(x))


class TestObjective:
    @pytest.mark.parametrize("text, label", [("elbo", "elbo"), ("EUBO", "eubo"),
                                             ("renyi:-2", "renyi:-2"), ("chi:2", "chi:2"),
                                             ("chi", "chi:2"), ("renyi:0.5", "renyi:0.5")])
    def test_parse_and_label(self, text, label):
        assert BoundObjective.parse(text).label == label

    @pytest.mark.parametrize("text", ["renyi:1", "chi:1", "chi:0.5", "renyi", "kl", "elbo:3",
                                      "renyi:abc"])
    def test_parse_rejects(self, text):
        with pytest.raises(ConfigurationError):
            BoundObjective.parse(text)

    def test_upper_and_lower(self):
        assert BoundObjective.eubo().is_upper
        assert BoundObjective.chi(3).is_upper
        assert BoundObjective.renyi(-0.5).is_upper
        assert not BoundObjective.elbo().is_upper
        assert not BoundObjective.renyi(0.5).is_upper
        assert not BoundObjective.renyi(2).is_upper


class TestNormalizeWeights:
    def test_equal(self):
        assert np.allclose(normalize_weights([0.0, 0.0, 0.0]), [1 / 3] * 3)

    def test_ratio(self):
        assert np.allclose(normalize_weights([0.0, math.log(3.0)]), [0.25, 0.75])

    def test_large_values_do_not_overflow(self):
        assert np.allclose(normalize_weights([1000.0, 1000.0 + math.log(3.0)]), [0.25, 0.75])

    def test_minus_inf_entries_get_zero(self):
        assert np.array_equal(normalize_weights([-np.inf, 0.0]), [0.0, 1.0])

    @pytest.mark.parametrize("bad", [[-np.inf, -np.inf], [], [np.nan, 0.0], [np.inf, 0.0]])
    def test_degenerate(self, bad):
        with pytest.raises(DegenerateWeightsError):
            normalize_weights(bad)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=50))
    def test_simplex(self, x):
        w = normalize_weights(x)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12

    def test_ess(self):
        assert effective_sample_size([0.25] * 4) == pytest.approx(4.0)
        assert effective_sample_size([1.0, 0.0]) == pytest.approx(1.0)


class TestLogMeanExp:
    def test_constant(self):
        assert log_mean_exp([5.0, 5.0]) == pytest.approx(5.0)

    def test_huge(self):
        assert log_mean_exp([1e4, 1e4 + math.log(3.0)]) == pytest.approx(1e4 + math.log(2.0))

    def test_all_minus_inf(self):
        with pytest.raises(DegenerateWeightsError):
            log_mean_exp([-np.inf])


class TestLogJoint:
    def test_single_datum_closed_form(self):
        value = log_joint_minibatch(MODEL, MODEL.data(), np.array([0.0]), 1)
        assert value == pytest.approx(-math.log(2.0 * math.pi), abs=1e-12)
        assert value == pytest.approx(-1.837877, abs=1e-6)

    def test_full_batch_has_unit_scale(self):
        model = ConjugateGaussianModel([0.3, -1.2, 0.8])
        theta = np.array([[0.4], [-0.1]])
        expected = model.log_prior(theta) + model.log_lik(theta, model.data()).sum(axis=1)
        assert np.allclose(log_joint_minibatch(model, model.data(), theta, 3), expected)

    def test_minibatch_doubles_likelihood_only(self):
        theta = np.array([0.7])
        batch = MODEL.data()
        lik = MODEL.log_lik(theta, batch).sum()
        prior = MODEL.log_prior(theta)[0]
        assert log_joint_minibatch(MODEL, batch, theta, 2) == pytest.approx(2 * lik + prior)

    def test_empty_batch(self):
        with pytest.raises(InputError):
            log_joint_minibatch(MODEL, DataBatch(np.empty((0, 0)), np.empty(0)),
                                np.array([0.0]), 1)

    def test_total_smaller_than_batch(self):
        model = ConjugateGaussianModel([0.0, 1.0])
        with pytest.raises(InputError):
            log_joint_minibatch(model, model.data(), np.array([0.0]), 1)


class TestEstimateBound:
    OBJECTIVES = [BoundObjective.elbo(), BoundObjective.eubo(), BoundObjective.renyi(-1),
                  BoundObjective.renyi(0.5), BoundObjective.renyi(2), BoundObjective.chi(2),
                  BoundObjective.chi(3)]

    @pytest.mark.parametrize("objective", OBJECTIVES, ids=lambda o: o.label)
    def test_exact_posterior_collapses_every_bound(self, objective):
        batch = particles(POSTERIOR_Q, 50, 3)
        assert np.allclose(batch.log_omega, LOG_EV, atol=1e-12)
        assert estimate_bound(objective, batch) == pytest.approx(-1.265512, abs=1e-6)

    def test_constant_zero_log_weights(self):
        batch = from_log_omega([0.0, 0.0, 0.0])
        assert estimate_bound(BoundObjective.elbo(), batch) == 0.0
        assert estimate_bound(BoundObjective.eubo(), batch) == 0.0

    def test_formulas(self):
        x = np.array([-1.0, 0.5, 2.0])
        batch = from_log_omega(x)
        w = np.exp(x) / np.exp(x).sum()
        assert estimate_bound(BoundObjective.elbo(), batch) == pytest.approx(x.mean())
        assert estimate_bound(BoundObjective.eubo(), batch) == pytest.approx(w @ x)
        assert estimate_bound(BoundObjective.renyi(-1), batch) == pytest.approx(
            0.5 * math.log(np.mean(np.exp(2 * x))))
        assert estimate_bound(BoundObjective.chi(3), batch) == pytest.approx(
            math.log(np.mean(np.exp(3 * x))) / 3)

    def test_eubo_rejects_minus_inf(self):
        with pytest.raises(DegenerateWeightsError):
            estimate_bound(BoundObjective.eubo(), from_log_omega([-np.inf, 0.0]))

    def test_mismatched_q_elbo_below_eubo(self):
        batch = particles(q(1.0, 2.0), 10_000, 11)
        assert estimate_bound(BoundObjective.elbo(), batch) <= estimate_bound(
            BoundObjective.eubo(), batch)

    @pytest.mark.parametrize("seed", range(10))
    def test_sandwich_holds_exactly_per_batch(self, seed):
        batch = particles(q(-0.7 + 0.2 * seed, 1.5), 10_000, seed)
        lo = estimate_bound(BoundObjective.elbo(), batch)
        ev = estimate_log_evidence(batch)
        up = estimate_bound(BoundObjective.eubo(), batch)
        assert lo <= ev <= up

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
    def test_sandwich_any_log_weights(self, x):
        batch = from_log_omega(x)
        lo = estimate_bound(BoundObjective.elbo(), batch)
        ev = estimate_log_evidence(batch)
        up = estimate_bound(BoundObjective.eubo(), batch)
        slack = 1e-12 * max(1.0, np.max(np.abs(x)))
        assert lo <= ev + slack and ev <= up + slack

    def test_renyi_monotone_in_alpha(self):
        batch = particles(q(0.5, 1.2), 2000, 4)
        values = [estimate_bound(BoundObjective.renyi(a), batch) for a in (-2, -1, 0, 0.5, 2)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestLogEvidence:
    def test_constant(self):
        assert estimate_log_evidence(from_log_omega([-3.5] * 4)) == pytest.approx(-3.5)

    def test_prior_proposal_is_consistent(self):
        prior = VariationalParams(np.array([0.0]), np.array([0.0]))
        assert estimate_log_evidence(particles(prior, 100_000, 0)) == pytest.approx(
            -1.2655, abs=0.02)

    def test_between_bounds_in_repeats(self):
        ok = 0
        for seed in range(50):
            batch = particles(q(0.5, 1.0), 10_000, 100 + seed)
            lo = estimate_bound(BoundObjective.elbo(), batch)
            up = estimate_bound(BoundObjective.eubo(), batch)
            ok += lo <= estimate_log_evidence(batch) <= up
        assert ok >= 48


def test_eubo_estimate_consistency_ladder():
    params = q(0.5, 1.0)
    truth = quad_eubo(MODEL, params, covering_grid(MODEL, params))
    medians = []
    for m in (100, 1000, 10_000, 100_000):
        errors = [abs(estimate_bound(BoundObjective.eubo(), particles(params, m, s)) - truth)
                  for s in range(50)]
        medians.append(np.median(errors))
    assert all(a > b for a, b in zip(medians, medians[1:])), medians


def test_particles_are_deterministic():
    a = particles(q(0.2, 0.8), 64, 9)
    b = particles(q(0.2, 0.8), 64, 9)
    for field in ("theta", "log_joint", "log_q", "log_omega", "weights_hat"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_objective_kind_values():
    assert [k.value for k in ObjectiveKind] == ["elbo", "eubo", "renyi", "chi"]
