"""Stochastic variational inference with evidence upper and lower bounds."""

__version__ = "0.1.0"

from .bounds import (
    BoundObjective,
    ObjectiveKind,
    ParticleBatch,
    draw_particles,
    effective_sample_size,
    estimate_bound,
    estimate_log_evidence,
    log_joint_minibatch,
    log_mean_exp,
    normalize_weights,
)
from .errors import (
    CapabilityError,
    ConfigurationError,
    DegenerateWeightsError,
    DivergentIntegralError,
    EuboError,
    IngestionError,
    InputError,
    OptimizerError,
    OracleError,
)
from .gradients import (
    EstimatorTag,
    GradientEstimate,
    chi_score_gradient,
    elbo_reparam_gradient,
    estimate_gradient,
    eubo_reparam_gradient,
    eubo_score_gradient,
    renyi_reparam_gradient,
    select_estimator,
)
from .models import (
    BnnRegressionModel,
    ConjugateGaussianModel,
    DataBatch,
    LogisticRegressionModel,
    ModelSpec,
    conjugate_posterior_and_evidence,
)
from .optim import OptimizerState, optimizer_step
from .variational import (
    NoiseDraw,
    VariationalParams,
    grad_logq_wrt_lambda,
    log_density_q,
    reparameterize,
)
