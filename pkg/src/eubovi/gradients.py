"""Monte Carlo gradient estimators for the ELBO, EUBO, Renyi and chi bounds.

Every estimator returns the gradient of the bound itself with respect to
``(mu, log_sigma)``; whether to ascend or descend is decided by the caller
(see :attr:`BoundObjective.is_upper`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .bounds import (
    BoundObjective,
    ObjectiveKind,
    ParticleBatch,
    draw_particles,
    grad_log_joint_minibatch,
    normalize_weights,
)
from .errors import ConfigurationError
from .models import DataBatch, ModelSpec
from .variational import NoiseDraw, VariationalParams, grad_logq_wrt_lambda


class EstimatorTag(str, enum.Enum):
    EUBO_SCORE = "eubo_score"
    EUBO_REPARAM = "eubo_reparam"
    ELBO_REPARAM = "elbo_reparam"
    RENYI_REPARAM = "renyi_reparam"
    CHI_SCORE = "chi_score"


@dataclass(frozen=True)
class GradientEstimate:
    grad_mu: np.ndarray
    grad_log_sigma: np.ndarray
    estimator_tag: EstimatorTag

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.grad_mu, self.grad_log_sigma])


@dataclass(frozen=True)
class PathwiseTerms:
    """Per-particle total derivatives along theta = mu + sigma * eps.

    ``dlogp_*`` is the chain rule of log p(D, theta) through theta, and
    ``dlogq_*`` is the total derivative of log q(g(eps); lambda): the path
    through theta plus the direct dependence on lambda.
    """

    particles: ParticleBatch
    dlogp_mu: np.ndarray
    dlogp_log_sigma: np.ndarray
    dlogq_mu: np.ndarray
    dlogq_log_sigma: np.ndarray


def pathwise_terms(model: ModelSpec, data: DataBatch, noise: NoiseDraw,
                   params: VariationalParams, total_n: int) -> PathwiseTerms:
    particles = draw_particles(model, data, params, noise, total_n)
    theta = particles.theta
    sigma_eps = params.sigma * noise.epsilon           # d theta / d log_sigma
    g = grad_log_joint_minibatch(model, data, theta, total_n)
    score_mu, score_ls = grad_logq_wrt_lambda(params, theta)
    grad_theta_logq = -(theta - params.mu) * np.exp(-2.0 * params.log_sigma)
    return PathwiseTerms(
        particles,
        dlogp_mu=g,
        dlogp_log_sigma=g * sigma_eps,
        dlogq_mu=grad_theta_logq + score_mu,
        dlogq_log_sigma=grad_theta_logq * sigma_eps + score_ls,
    )


def _weighted_score(weights, params, theta, tag, scale=1.0) -> GradientEstimate:
    score_mu, score_ls = grad_logq_wrt_lambda(params, theta)
    return GradientEstimate(-scale * (weights @ score_mu), -scale * (weights @ score_ls), tag)


def eubo_score_gradient(batch: ParticleBatch, params: VariationalParams) -> GradientEstimate:
    """-sum_i w_i grad_lambda log q(theta_i), with theta_i held fixed."""
    return _weighted_score(batch.weights_hat, params, batch.theta, EstimatorTag.EUBO_SCORE)


def chi_score_gradient(batch: ParticleBatch, params: VariationalParams,
                       n: float = 2.0) -> GradientEstimate:
    """Score-form gradient of the chi^n bound (1/n) log E_q[omega^n].

    Weights are proportional to omega^n; the factor (n-1)/n makes this the
    gradient of the bound as estimated by :func:`estimate_bound`.
    """
    if not n > 1.0:
        raise ConfigurationError("chi bound needs n > 1")
    weights = normalize_weights(n * batch.log_omega)
    return _weighted_score(weights, params, batch.theta, EstimatorTag.CHI_SCORE,
                           scale=(n - 1.0) / n)


def eubo_reparam_gradient(model: ModelSpec, data: DataBatch, noise: NoiseDraw,
                          params: VariationalParams, total_n: int) -> GradientEstimate:
    """Reparameterized EUBO gradient.

    sum_i w_i [(log omega_i - U + 1) d log p(D, g(eps_i)) - d log q(g(eps_i))]
    where U = sum_i w_i log omega_i is the self-normalized EUBO estimate.
    Centering log omega on U makes this the exact gradient of that estimate
    at fixed noise; without it the log_sigma coordinate is off by U.
    """
    return _eubo_reparam(pathwise_terms(model, data, noise, params, total_n))


def _eubo_reparam(t: PathwiseTerms) -> GradientEstimate:
    w = t.particles.weights_hat
    x = t.particles.log_omega
    coeff = w * (x - w @ x + 1.0)
    return GradientEstimate(
        coeff @ t.dlogp_mu - w @ t.dlogq_mu,
        coeff @ t.dlogp_log_sigma - w @ t.dlogq_log_sigma,
        EstimatorTag.EUBO_REPARAM,
    )


def elbo_reparam_gradient(model: ModelSpec, data: DataBatch, noise: NoiseDraw,
                          params: VariationalParams, total_n: int) -> GradientEstimate:
    return _elbo_reparam(pathwise_terms(model, data, noise, params, total_n))


def _elbo_reparam(t: PathwiseTerms) -> GradientEstimate:
    return GradientEstimate(
        np.mean(t.dlogp_mu - t.dlogq_mu, axis=0),
        np.mean(t.dlogp_log_sigma - t.dlogq_log_sigma, axis=0),
        EstimatorTag.ELBO_REPARAM,
    )


def renyi_reparam_gradient(model: ModelSpec, data: DataBatch, noise: NoiseDraw,
                           params: VariationalParams, total_n: int,
                           alpha: float) -> GradientEstimate:
    """Gradient of (1/(1-alpha)) log mean(omega^(1-alpha)) at fixed noise.

    Weights are proportional to omega^(1-alpha); alpha = 0 gives the
    importance-weighted bound and alpha = -1 the chi^2 bound.
    """
    if alpha == 1.0:
        raise ConfigurationError("alpha = 1 is the KL limit; use elbo_reparam_gradient")
    return _renyi_reparam(pathwise_terms(model, data, noise, params, total_n), alpha)


def _renyi_reparam(t: PathwiseTerms, alpha: float) -> GradientEstimate:
    w = normalize_weights((1.0 - alpha) * t.particles.log_omega)
    return GradientEstimate(
        w @ (t.dlogp_mu - t.dlogq_mu),
        w @ (t.dlogp_log_sigma - t.dlogq_log_sigma),
        EstimatorTag.RENYI_REPARAM,
    )


def select_estimator(objective: BoundObjective, variant: str = "score") -> EstimatorTag:
    """Map an objective and a preferred variant (``score``/``reparam``) to an estimator.

    The ELBO and Renyi bounds with alpha >= 0 only have reparameterized
    estimators.  chi(n) in reparameterized form is the Renyi estimator with
    alpha = 1 - n, and conversely a Renyi upper bound (alpha < 0) in score form
    is the chi score estimator with n = 1 - alpha.
    """
    if variant not in ("score", "reparam"):
        raise ConfigurationError(f"estimator variant must be 'score' or 'reparam', got {variant!r}")
    kind = objective.kind
    if kind is ObjectiveKind.EUBO:
        return EstimatorTag.EUBO_SCORE if variant == "score" else EstimatorTag.EUBO_REPARAM
    if kind is ObjectiveKind.CHI:
        return EstimatorTag.CHI_SCORE if variant == "score" else EstimatorTag.RENYI_REPARAM
    if kind is ObjectiveKind.ELBO:
        return EstimatorTag.ELBO_REPARAM
    if objective.alpha < 0.0 and variant == "score":
        return EstimatorTag.CHI_SCORE
    return EstimatorTag.RENYI_REPARAM


def estimate_gradient(objective: BoundObjective, tag: EstimatorTag, model: ModelSpec,
                      data: DataBatch, noise: NoiseDraw, params: VariationalParams,
                      total_n: int) -> tuple[GradientEstimate, ParticleBatch]:
    """Run the estimator ``tag`` for ``objective``.

    Returns the gradient and the particle batch it was computed from, which
    callers use for effective-sample-size diagnostics.
    """
    if tag is EstimatorTag.EUBO_SCORE:
        batch = draw_particles(model, data, params, noise, total_n)
        return eubo_score_gradient(batch, params), batch
    if tag is EstimatorTag.CHI_SCORE:
        batch = draw_particles(model, data, params, noise, total_n)
        n = objective.n if objective.kind is ObjectiveKind.CHI else 1.0 - objective.alpha
        return chi_score_gradient(batch, params, n), batch
    t = pathwise_terms(model, data, noise, params, total_n)
    if tag is EstimatorTag.EUBO_REPARAM:
        return _eubo_reparam(t), t.particles
    if tag is EstimatorTag.ELBO_REPARAM:
        return _elbo_reparam(t), t.particles
    alpha = 1.0 - objective.n if objective.kind is ObjectiveKind.CHI else objective.alpha
    if alpha == 1.0:
        raise ConfigurationError("alpha = 1 is the KL limit; use elbo_reparam_gradient")
    return _renyi_reparam(t, alpha), t.particles
