"""
Command-line entry point
run / convergence / check / version
"""

from pathlib import Path
from typing import Dict, List, Optional
import argparse
import json
import logging
import sys

from evaluation.diagnostics import InvariantChecks
from experiments import __version__
from experiments.config import ConfigError, ExperimentConfig, load_config
from experiments.fitting import ConvergenceFit, fit_order
from experiments.montecarlo import ErrorRecord, mc_error
from experiments.output import records_frame, write_fits, write_gnuplot, write_records, write_step_log
from experiments.telemetry import RuntimeSettings, configure_logging
from integrator.sampler import StrategySpec
from integrator.solver import SolverError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="randsplit",
        description="Randomized domain-decomposition splitting for parabolic p-Laplacian problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p: argparse.ArgumentParser):
        p.add_argument("--config", required=True, help="Experiment JSON (path or name under data/configs)")
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        p.add_argument("--out", default=None, help="CSV output path (default: config output or stdout)")
        p.add_argument("--reps", type=int, default=None, help="Override realizations per step size")
        p.add_argument("--threads", type=int, default=None, help="Worker processes")
        p.add_argument("--gnuplot", action="store_true", help="Also write (h, rel_error) files")

    experiment_args(sub.add_parser("run", help="Monte Carlo errors for the configured strategy"))
    experiment_args(sub.add_parser("convergence", help="Errors and fitted orders for every strategy"))

    check = sub.add_parser("check", help="Invariant and diagnostic suite")
    check.add_argument("--config", default="default.json", help="Experiment JSON")
    check.add_argument("--seed", type=int, default=None)

    sub.add_parser("version", help="Print the version")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    return config.with_overrides(
        seed=args.seed,
        reps=getattr(args, "reps", None),
        output=getattr(args, "out", None),
    )


def _sweep(
    config: ExperimentConfig,
    strategies: List[StrategySpec],
    settings: RuntimeSettings,
    workers: Optional[int],
) -> Dict[str, List[ErrorRecord]]:
    results = {}
    log_path = settings.step_log or _step_log_path(config)
    for strategy in strategies:
        records = []
        for h in sorted(config.step_sizes, reverse=True):
            sink = [] if settings.step_logging else None
            records.append(mc_error(config, h, strategy, workers, sink))
            if sink:
                write_step_log(sink, log_path, strategy.kind, strategy.param, h)
        results[strategy.label] = records
    return results


def _step_log_path(config: ExperimentConfig) -> Path:
    if config.output:
        return Path(config.output).with_suffix(".steps.csv")
    return Path(f"{config.name}.steps.csv")


def _emit(records: List[ErrorRecord], config: ExperimentConfig, gnuplot: bool):
    if config.output:
        write_records(records, config.output)
        if gnuplot or config.gnuplot:
            write_gnuplot(records, config.output)
    else:
        records_frame(records).to_csv(sys.stdout, index=False)


def cmd_run(args, settings: RuntimeSettings) -> int:
    config = _load(args)
    results = _sweep(config, [config.strategy], settings, args.threads or settings.threads)
    records = [r for recs in results.values() for r in recs]
    _emit(records, config, args.gnuplot)
    return EXIT_OK


def cmd_convergence(args, settings: RuntimeSettings) -> int:
    config = _load(args)
    results = _sweep(config, config.strategies, settings, args.threads or settings.threads)
    records = [r for recs in results.values() for r in recs]
    _emit(records, config, args.gnuplot)

    fits: Dict[str, ConvergenceFit] = {}
    for label, recs in results.items():
        try:
            fits[label] = fit_order(recs, config.fit_range)
        except ValueError as e:
            logger.warning(f"No order fit for {label}: {e}")
            continue
        print(f"# {label}: slope {fits[label].slope:.3f}, dropped {fits[label].dropped}", file=sys.stderr)
    if fits and config.output:
        write_fits(fits, config.output)
    return EXIT_OK


def cmd_check(args, settings: RuntimeSettings) -> int:
    config = load_config(args.config).with_overrides(seed=args.seed)
    report = InvariantChecks().run(config)
    print(json.dumps(report, indent=2, default=str))
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch, and map failures to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK

    settings = configure_logging()
    handlers = {"run": cmd_run, "convergence": cmd_convergence, "check": cmd_check}
    try:
        return handlers[args.command](args, settings)
    except ConfigError as e:
        logger.error(str(e))
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"Solver failure: {e}", exc_info=True)
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
