"""Config-driven experiments: train each objective over repeated trials and report.

A trial runs the black-box loop (minibatch, particles, weights, gradient,
optimizer step) for ``epochs`` passes, records per-epoch ELBO / EUBO /
log-evidence estimates on the full training set, and finishes with bound
estimates on ``bound_data`` and predictive metrics on the held-out split.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import __version__
from .bounds import BoundObjective, ObjectiveKind, draw_particles, estimate_bound, \
    estimate_log_evidence
from .data import Dataset, SplitSpec, builtin_schema, load_dataset, read_key_values, split, \
    standardize, MinibatchSampler
from .errors import ConfigurationError, DegenerateWeightsError, InputError, OptimizerError
from .gradients import GradientEstimate, estimate_gradient, select_estimator
from .models import BnnRegressionModel, ConjugateGaussianModel, DataBatch, \
    LogisticRegressionModel, ModelSpec
from .optim import OptimizerState, optimizer_step
from .variational import NoiseDraw, VariationalParams, reparameterize

logger = logging.getLogger(__name__)


def _tuple_of(convert):
    def parse(text):
        if isinstance(text, (tuple, list)):
            return tuple(convert(t) if isinstance(t, str) else t for t in text)
        return tuple(convert(t.strip()) for t in str(text).split(",") if t.strip())
    return parse


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return int(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    dataset: str = "iris"
    model: str = "logreg"
    hidden_units: int | None = None
    observations: tuple[float, ...] = (0.0,)
    objectives: tuple[BoundObjective, ...] = (BoundObjective.eubo(),)
    estimator: str = "score"
    num_particles: int = 10
    batch_size: int = 100
    epochs: int = 500
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    init_log_sigma: float = -2.3
    init_mu_std: float = 0.0
    trials: int = 20
    seed: int = 0
    eval_particles: int = 1000
    train_fraction: float = 0.9
    bound_data: str = "all"

    _CONVERTERS = {
        "name": str, "dataset": str, "model": str, "hidden_units": _optional_int,
        "observations": _tuple_of(float), "objectives": _tuple_of(BoundObjective.parse),
        "estimator": str, "num_particles": int, "batch_size": int, "epochs": int,
        "optimizer": str, "learning_rate": float, "beta1": float, "beta2": float,
        "eps_stab": float, "init_log_sigma": float, "init_mu_std": float, "trials": int,
        "seed": int, "eval_particles": int, "train_fraction": float, "bound_data": str,
    }

    def __post_init__(self):
        if self.num_particles < 1 or self.trials < 1 or self.epochs < 1:
            raise ConfigurationError("num_particles, trials and epochs must all be >= 1")
        if self.batch_size < 1 or self.eval_particles < 1:
            raise ConfigurationError("batch_size and eval_particles must be >= 1")
        if self.model not in ("logreg", "bnn", "conjugate"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        if self.estimator not in ("score", "reparam"):
            raise ConfigurationError(f"unknown estimator variant {self.estimator!r}")
        if self.bound_data not in ("all", "train"):
            raise ConfigurationError("bound_data must be 'all' or 'train'")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1]")
        if not self.objectives:
            raise ConfigurationError("at least one objective is required")
        labels = [o.label for o in self.objectives]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate objectives: {labels}")
        OptimizerState(self.optimizer, self.learning_rate, self.beta1, self.beta2, self.eps_stab)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        unknown = set(mapping) - set(cls._CONVERTERS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            values = {k: cls._CONVERTERS[k](v) for k, v in mapping.items()}
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"bad config value: {exc}") from None
        return cls(**values)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_mapping(read_key_values(text, is_text=True))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(read_key_values(path))

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "objectives":
                text = ", ".join(o.label for o in value)
            elif f.name == "observations":
                text = ", ".join(repr(float(v)) for v in value)
            elif value is None:
                text = "auto"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def builtin_config(name: str) -> Path:
    from importlib import resources
    path = resources.files("eubovi") / "configs" / f"{name}.cfg"
    if not path.is_file():
        raise ConfigurationError(f"no built-in config named {name!r}")
    return Path(str(path))


# --- problem setup ---------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    model: ModelSpec
    train: DataBatch
    test: DataBatch | None
    bound: DataBatch
    target_stats: tuple[float, float] | None = None


@functools.lru_cache(maxsize=16)
def _cached_dataset(name: str) -> Dataset:
    return load_dataset(name)


def prepare_problem(config: ExperimentConfig, split_seed: int) -> Problem:
    if config.model == "conjugate":
        model = ConjugateGaussianModel(config.observations)
        data = model.data()
        return Problem(model, data, None, data)

    full = _cached_dataset(config.dataset)
    regression = config.model == "bnn"
    if config.train_fraction < 1.0:
        train, test = split(full, SplitSpec(config.train_fraction, split_seed))
    else:
        train, test = full, None
    train = standardize(train, targets=regression)
    stats, tstats = train.feature_stats, train.target_stats
    test = standardize(test, stats, targets=regression, target_stats=tstats) if test else None
    everything = standardize(full, stats, targets=regression, target_stats=tstats)
    bound = everything if config.bound_data == "all" else train

    if regression:
        hidden = config.hidden_units
        if hidden is None and not config.dataset.endswith(".schema"):
            hidden = builtin_schema(config.dataset).hidden_units
        model = BnnRegressionModel(full.features.shape[1], hidden or 50)
    else:
        model = LogisticRegressionModel(full.features.shape[1])
    return Problem(model, train.batch, test.batch if test else None, bound.batch, tstats)


# --- metrics ---------------------------------------------------------------------------

def evaluate_test_metrics(params: VariationalParams, model: ModelSpec, test_set: DataBatch,
                          num_draws: int = 1000, rng=None, target_stats=None):
    """Predictive metrics averaged over ``num_draws`` draws from q.

    Returns ``(error, test_ll)`` for logistic regression and ``(rmse, test_ll)``
    for BNN regression, both in the original target scale.  ``test_ll`` is the
    mean over test points of log (1/M) sum_m p(y | theta_m).
    """
    if test_set is None or len(test_set) == 0:
        raise InputError("test set is empty")
    rng = np.random.default_rng(rng)
    noise = NoiseDraw.from_rng(rng, num_draws, params.dim)
    theta = reparameterize(params, noise)
    log_lik = model.log_lik(theta, test_set)
    if isinstance(model, LogisticRegressionModel):
        prob = model.predict(theta, test_set.features).mean(axis=0)
        error = float(np.mean((prob > 0.5) != (test_set.targets == 1.0)))
        metric = error
    elif isinstance(model, BnnRegressionModel):
        ym, ys = target_stats if target_stats is not None else (0.0, 1.0)
        pred = model.predict(theta, test_set.features).mean(axis=0) * ys + ym
        y = test_set.targets * ys + ym
        metric = float(np.sqrt(np.mean((pred - y) ** 2)))
        log_lik = log_lik - np.log(ys)
    else:
        raise InputError(f"no predictive metrics for model {model.name!r}")
    test_ll = float(np.mean(logsumexp(log_lik, axis=0) - np.log(num_draws)))
    return metric, test_ll


# --- trials ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialReport:
    objective: str
    estimator: str
    seed: int
    elbo_trace: tuple[float, ...]
    eubo_trace: tuple[float, ...]
    log_evidence_trace: tuple[float, ...]
    ess_trace: tuple[float, ...]
    final_bounds: dict
    test_metric: float | None
    test_ll: float | None
    final_mu: tuple[float, ...]
    final_log_sigma: tuple[float, ...]
    diverged: bool = False
    divergence_reason: str = ""
    wall_clock: float = field(default=0.0, compare=False)


def _evaluate_bounds(model, data: DataBatch, params, rng, num_particles, objectives=()):
    noise = NoiseDraw.from_rng(rng, num_particles, params.dim)
    particles = draw_particles(model, data, params, noise, len(data))
    out = {
        "elbo": estimate_bound(BoundObjective.elbo(), particles),
        "eubo": estimate_bound(BoundObjective.eubo(), particles),
        "log_evidence": estimate_log_evidence(particles),
    }
    for objective in objectives:
        out[objective.label] = estimate_bound(objective, particles)
    return out


def run_trial(config: ExperimentConfig, trial_seed: int,
              objective: BoundObjective | None = None) -> TrialReport:
    """Train one objective from one seed and report traces, bounds and metrics."""
    started = time.perf_counter()
    objective = objective or config.objectives[0]
    split_ss, init_ss, batch_ss, noise_ss, eval_ss = np.random.SeedSequence(trial_seed).spawn(5)
    problem = prepare_problem(config, int(split_ss.generate_state(1)[0]))
    model, train = problem.model, problem.train
    n_train = len(train)
    dim = model.latent_dim

    params = VariationalParams.initial(dim, config.init_log_sigma, config.init_mu_std,
                                       np.random.default_rng(init_ss))
    state = OptimizerState.create(config.optimizer, dim, learning_rate=config.learning_rate,
                                  beta1=config.beta1, beta2=config.beta2,
                                  eps_stab=config.eps_stab)
    sampler = MinibatchSampler(n_train, config.batch_size, np.random.default_rng(batch_ss))
    noise_rng = np.random.default_rng(noise_ss)
    eval_rng = np.random.default_rng(eval_ss)
    tag = select_estimator(objective, config.estimator)
    sign = 1.0 if objective.is_upper else -1.0
    traces = {"elbo": [], "eubo": [], "log_evidence": [], "ess": []}
    reason = ""

    for epoch in range(config.epochs):
        ess = []
        try:
            for index in sampler.epoch_batches():
                noise = NoiseDraw.from_rng(noise_rng, config.num_particles, dim)
                grad, particles = estimate_gradient(objective, tag, model, train.subset(index),
                                                    noise, params, n_train)
                ess.append(particles.ess)
                step = GradientEstimate(sign * grad.grad_mu, sign * grad.grad_log_sigma,
                                        grad.estimator_tag)
                state, params = optimizer_step(state, params, step)
                if logger.isEnabledFor(logging.DEBUG):
                    logger.debug("%s step %d: ESS %.2f", objective.label, state.step_count,
                                 ess[-1])
            bounds = _evaluate_bounds(model, train, params, eval_rng, config.eval_particles)
        except (OptimizerError, DegenerateWeightsError, FloatingPointError) as exc:
            reason = f"epoch {epoch + 1}: {exc}"
            logger.warning("%s trial seed %d diverged at %s", objective.label, trial_seed, reason)
            break
        for key in ("elbo", "eubo", "log_evidence"):
            traces[key].append(bounds[key])
        traces["ess"].append(float(np.mean(ess)))

    diverged = bool(reason)
    final, metric, test_ll = {}, None, None
    if not diverged:
        try:
            final = _evaluate_bounds(model, problem.bound, params, eval_rng,
                                     config.eval_particles, (objective,))
            if problem.test is not None:
                metric, test_ll = evaluate_test_metrics(params, model, problem.test,
                                                        config.eval_particles, eval_rng,
                                                        problem.target_stats)
        except (DegenerateWeightsError, FloatingPointError) as exc:
            diverged, reason = True, f"final evaluation: {exc}"
    pad = config.epochs - len(traces["elbo"])
    for key in traces:
        traces[key].extend([float("nan")] * pad)
    return TrialReport(
        objective=objective.label, estimator=tag.value, seed=int(trial_seed),
        elbo_trace=tuple(traces["elbo"]), eubo_trace=tuple(traces["eubo"]),
        log_evidence_trace=tuple(traces["log_evidence"]), ess_trace=tuple(traces["ess"]),
        final_bounds=final, test_metric=metric, test_ll=test_ll,
        final_mu=tuple(params.mu.tolist()), final_log_sigma=tuple(params.log_sigma.tolist()),
        diverged=diverged, divergence_reason=reason,
        wall_clock=time.perf_counter() - started,
    )


# --- aggregation -----------------------------------------------------------------------

def mean_std(values) -> tuple[float, float, int]:
    """Mean and sample standard deviation (ddof=1); a single value has std 0."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        return float("nan"), float("nan"), 0
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std, int(values.size)


@dataclass(frozen=True)
class Cell:
    label: str
    mean: float
    std: float
    n: int
    diverged: int = 0

    @property
    def single_trial(self) -> bool:
        return self.n == 1


@dataclass
class AggregateReport:
    config: ExperimentConfig
    trials: dict[str, list[TrialReport]]

    def _ok(self, label):
        return [r for r in self.trials.get(label, []) if not r.diverged]

    def _cell(self, row, label, extract):
        reports = self._ok(label)
        m, s, n = mean_std(extract(r) for r in reports)
        return Cell(row, m, s, n, len(self.trials.get(label, [])) - len(reports))

    def _evidence_source(self):
        return "eubo" if "eubo" in self.trials else next(iter(self.trials))

    def bound_rows(self) -> list[Cell]:
        """Rows in table order: upper bounds, the U/2 + log p/2 row, log p, lower bounds."""
        objectives = {o.label: o for o in self.config.objectives}
        renyi = sorted((o for o in objectives.values() if o.kind is ObjectiveKind.RENYI),
                       key=lambda o: o.alpha)
        chi = sorted((o for o in objectives.values() if o.kind is ObjectiveKind.CHI),
                     key=lambda o: o.n)
        rows = [self._cell(f"U_{o.label}", o.label, lambda r, k=o.label: r.final_bounds[k])
                for o in renyi if o.is_upper]
        if "eubo" in objectives:
            rows.append(self._cell("U_eubo", "eubo", lambda r: r.final_bounds["eubo"]))
        rows += [self._cell(f"U_{o.label}", o.label, lambda r, k=o.label: r.final_bounds[k])
                 for o in chi]
        src = self._evidence_source()
        if "eubo" in objectives:
            rows.append(self._cell("U_eubo/2+log_p/2", "eubo",
                                   lambda r: 0.5 * (r.final_bounds["eubo"]
                                                    + r.final_bounds["log_evidence"])))
        rows.append(self._cell("log_p", src, lambda r: r.final_bounds["log_evidence"]))
        if "elbo" in objectives:
            rows.append(self._cell("L_elbo", "elbo", lambda r: r.final_bounds["elbo"]))
        rows += [self._cell(f"L_{o.label}", o.label, lambda r, k=o.label: r.final_bounds[k])
                 for o in renyi if not o.is_upper]
        return rows

    def metric_rows(self) -> list[Cell]:
        if self.config.model == "conjugate" or self.config.train_fraction >= 1.0:
            return []
        name = "test_rmse" if self.config.model == "bnn" else "test_error"
        rows = []
        for o in self.config.objectives:
            rows.append(self._cell(f"{o.label}:{name}", o.label, lambda r: r.test_metric))
            rows.append(self._cell(f"{o.label}:test_nll", o.label, lambda r: -r.test_ll))
        return rows

    def row(self, label: str) -> Cell:
        for cell in self.bound_rows() + self.metric_rows():
            if cell.label == label:
                return cell
        raise KeyError(label)


def _trial_job(args):
    config, seed, objective = args
    return run_trial(config, seed, objective)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> AggregateReport:
    """All objectives x ``config.trials`` trials with seeds ``seed + trial_index``."""
    tasks = [(config, config.seed + k, o) for o in config.objectives for k in range(config.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, tasks))
    else:
        results = [_trial_job(t) for t in tasks]
    trials: dict[str, list[TrialReport]] = {o.label: [] for o in config.objectives}
    for report in results:
        trials[report.objective].append(report)
    for label, reports in trials.items():
        bad = sum(r.diverged for r in reports)
        if bad:
            logger.warning("%s: %d of %d trials diverged and are excluded", label, bad,
                           len(reports))
    return AggregateReport(config, trials)


# --- output ----------------------------------------------------------------------------

def format_cell(cell: Cell) -> str:
    return f"{cell.mean:.2f}±{cell.std:.2f}"


def _table_text(cells, fmt: str, title: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", "mean", "std", "n", "diverged"])
        for c in cells:
            writer.writerow([c.label, f"{c.mean:.6g}", f"{c.std:.6g}", c.n, c.diverged])
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = [f"| row | {title} |", "| --- | --- |"]
        for c in cells:
            note = " (1 trial)" if c.single_trial else ""
            note += f" ({c.diverged} diverged)" if c.diverged else ""
            lines.append(f"| {c.label} | {format_cell(c)}{note} |")
        return "\n".join(lines) + "\n"
    raise ConfigurationError(f"unknown table format {fmt!r}")


def emit_tables(report: AggregateReport, fmt: str, out_dir) -> list[Path]:
    """Write ``bounds_table.<ext>`` and ``test_metrics.<ext>`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "csv" else "md"
    title = report.config.name
    paths = []
    for stem, cells in (("bounds_table", report.bound_rows()),
                        ("test_metrics", report.metric_rows())):
        path = out_dir / f"{stem}.{ext}"
        path.write_text(_table_text(cells, fmt, title), encoding="utf-8")
        paths.append(path)
    return paths


def read_table_csv(path) -> dict[str, tuple[float, float, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["row"]: (float(r["mean"]), float(r["std"]), int(r["n"]))
                for r in csv.DictReader(fh)}


def emit_trace(report: TrialReport, path) -> Path:
    """Per-epoch bound trace as CSV with header ``epoch,elbo,eubo,log_evidence``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "elbo", "eubo", "log_evidence"])
        rows = zip(report.elbo_trace, report.eubo_trace, report.log_evidence_trace)
        for epoch, (lo, up, ev) in enumerate(rows, start=1):
            writer.writerow([epoch, repr(lo), repr(up), repr(ev)])
    return path


def emit_manifest(report: AggregateReport, path) -> Path:
    manifest = {
        "config": report.config.to_text(),
        "trial_seeds": [report.config.seed + k for k in range(report.config.trials)],
        "bound_data": report.config.bound_data,
        "estimators": {label: sorted({r.estimator for r in reports})
                       for label, reports in report.trials.items()},
        "diverged": {label: [r.seed for r in reports if r.diverged]
                     for label, reports in report.trials.items()},
        "versions": {"eubovi": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def write_outputs(report: AggregateReport, out_dir, fmt: str = "md") -> list[Path]:
    out_dir = Path(out_dir)
    paths = emit_tables(report, fmt, out_dir)
    for label, reports in report.trials.items():
        sub = out_dir / label.replace(":", "_")
        for k, r in enumerate(reports):
            paths.append(emit_trace(r, sub / f"trace_trial{k}.csv"))
    paths.append(emit_manifest(report, out_dir / "run_manifest.json"))
    return paths
