"""Command line entry point: ``eubovi run | validate-theorem1 | gradcheck``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .checks import InequalityGrid, check_estimators, check_inequalities, gradcheck_model
from .errors import ConfigurationError, EuboError
from .experiment import (ExperimentConfig, builtin_config, format_cell, run_experiment,
                         write_outputs)

logger = logging.getLogger("eubovi")


def _resolve(path_or_name: str, builtin) -> Path:
    path = Path(path_or_name)
    if path.is_file():
        return path
    return builtin(path_or_name)


def _builtin_grid(name: str) -> Path:
    from importlib import resources
    path = resources.files("eubovi") / "configs" / f"{name}.grid"
    if not path.is_file():
        raise FileNotFoundError(f"no grid file {name!r}")
    return Path(str(path))


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(_resolve(args.config, builtin_config))
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.trials is not None:
        overrides["trials"] = str(args.trials)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if overrides:
        mapping = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
        mapping.update(overrides)
        config = ExperimentConfig.from_mapping(mapping)

    report = run_experiment(config, jobs=args.jobs)
    out = Path(args.out or f"runs/{config.name}")
    paths = write_outputs(report, out, args.format)
    for cell in report.bound_rows() + report.metric_rows():
        flag = f"  ({cell.diverged} diverged)" if cell.diverged else ""
        print(f"{cell.label:28s} {format_cell(cell)}{flag}")
    print(f"wrote {len(paths)} files to {out}")
    return 0


def _cmd_validate(args) -> int:
    path = _resolve(args.grid, _builtin_grid)
    report = check_inequalities(InequalityGrid.from_file(path))
    print(f"{report.num_pairs} (p, q) pairs")
    for gating in (True, False):
        for name, (ok, total, worst) in report.summary(gating).items():
            status = ("PASS" if ok == total else "FAIL") if gating else "info"
            print(f"{status}  {name:40s} {ok}/{total}  min slack {worst:.3e}")
    failures = [c for c in report.gating if not c.passed]
    for c in failures[:10]:
        print(f"  violated: {c.inequality} at {c.case}: lhs {c.lhs:.12g} rhs {c.rhs:.12g}")
    return 0 if report.passed else 1


def _cmd_gradcheck(args) -> int:
    names = ("logreg", "bnn", "conjugate") if args.model == "all" else (args.model,)
    ok = True
    for name in names:
        result = gradcheck_model(name, cases=args.cases, seed=args.seed)
        ok &= result.passed
        print(f"{'PASS' if result.passed else 'FAIL'}  {name}: {result.cases} random cases, "
              f"max relative error {result.max_rel_error:.2e} (tolerance {result.rtol:g})")
    if "conjugate" in names and not args.skip_estimators:
        for check in check_estimators(num_particles=args.particles, seed=args.seed):
            ok &= check.passed
            est = ", ".join(f"{v:+.4f}" for v in check.estimate)
            ref = ", ".join(f"{v:+.4f}" for v in check.reference)
            print(f"{'PASS' if check.passed else 'FAIL'}  {check.label:26s} "
                  f"estimate ({est})  reference ({ref})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eubovi",
                                     description="Variational inference with evidence bounds.")
    parser.add_argument("--version", action="version", version=f"eubovi {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every objective in a config over repeated trials")
    run.add_argument("--config", required=True,
                     help="config file, or a built-in name: conjugate, iris, boston")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--format", choices=("csv", "md"), default="md")
    run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config field; repeatable")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate-theorem1",
                         help="check the bound inequalities by quadrature on a Gaussian grid")
    val.add_argument("--grid", default="theorem1",
                     help="grid file, or the built-in name 'theorem1'")
    val.set_defaults(func=_cmd_validate)

    grad = sub.add_parser("gradcheck", help="finite-difference checks of model and "
                                            "estimator gradients")
    grad.add_argument("--model", required=True, choices=("logreg", "bnn", "conjugate", "all"))
    grad.add_argument("--cases", type=int, default=20)
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--particles", type=int, default=100_000,
                      help="particles for the estimator checks on the conjugate model")
    grad.add_argument("--skip-estimators", action="store_true")
    grad.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EuboError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
