"""
Command-line front end.

    mpp-verifier simulate    --config <scenario> [--seed N] [--paths N] [--threads N] [--out DIR]
    mpp-verifier fdd         --config <scenario> --times 1,2 --counts 1,0
    mpp-verifier verify      --config <scenario> [--format json|csv|text]
    mpp-verifier assumptions --config <scenario>

--config takes a file path or the name of a shipped scenario.

Exit codes: 0 pass, 1 verification failure, 2 config/usage error,
3 numeric error.
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import (AssumptionViolation, CheckError, ConfigError, DomainError, MppError,
                     UnsupportedOperationError, ValidationError)
from .log import configure_logging
from .models import FddQuery, get_output_dir, atomic_write_text, parse_number_list
from .scenario import FORMATS, ScenarioConfig, shipped_scenarios
from .sim import count_summary, simulate, write_path_dump
from .verify import (Scenario, VerificationReport, assumption_records, run_assumption_suite,
                     run_full_verification, run_rate_identity_check)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SUMMARY_COLUMNS = ("time", "mean_count", "variance_count", "std_error_mean")


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, CheckError):
        return exit_code_for(error.cause)
    if isinstance(error, (ConfigError, ValidationError, DomainError, UnsupportedOperationError)):
        return EXIT_CONFIG
    if isinstance(error, AssumptionViolation):
        return EXIT_VERIFICATION_FAILED
    return EXIT_NUMERIC          # NumericError and anything unforeseen


def load_config(args) -> ScenarioConfig:
    config = ScenarioConfig.load(args.config)
    return config.with_overrides(seed=args.seed, paths=args.paths, threads=args.threads,
                                 out=args.out, fmt=getattr(args, "format", None))


def _output_dir(config: ScenarioConfig) -> Path:
    return get_output_dir(config.output.directory)


def _stem(config: ScenarioConfig, kind: str) -> str:
    return f"{config.name}_{kind}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = load_config(args)
    scenario = Scenario.from_config(config)
    ensemble = simulate(scenario.plan, config.simulation.threads)

    horizon = config.simulation.horizon
    times = sorted({horizon * j / 4 for j in range(1, 5)} | ({1.0} if horizon >= 1 else set()))
    rows = count_summary(ensemble, times)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([f"{x:.10g}" for x in row])

    out_dir = _output_dir(config)
    summary_path = out_dir / f"{_stem(config, 'summary')}.csv"
    atomic_write_text(summary_path, buf.getvalue())
    print(buf.getvalue(), end="")
    logger.info(f"[SIM] summary written to {summary_path}")
    if config.output.dump_paths or args.dump:
        dump_path = out_dir / f"{_stem(config, 'paths')}.txt"
        write_path_dump(dump_path, ensemble, scenario.plan)
        logger.info(f"[SIM] path dump written to {dump_path}")
    return EXIT_OK


def cmd_fdd(args) -> int:
    config = load_config(args)
    times = parse_number_list(args.times, float, "--times")
    increments = parse_number_list(args.counts, int, "--counts")
    query = FddQuery(tuple(times), tuple(increments))
    scenario = Scenario.from_config(config)
    value, error = scenario.evaluator.probability_with_error(query)
    fmt = args.format or "text"
    result = {"scenario": config.name, "evaluator": scenario.evaluator.name,
              "times": list(query.times), "increments": list(query.increments),
              "probability": value, "error_estimate": error}
    if fmt == "json":
        print(json.dumps(result, indent=2, sort_keys=True))
    elif fmt == "csv":
        print("times,increments,probability,error_estimate")
        print(f"{' '.join(map(repr, query.times))},{' '.join(map(str, query.increments))},"
              f"{value:.10g},{error:.3g}")
    else:
        print(f"Evaluator:   {scenario.evaluator.name}")
        print(f"Times:       {', '.join(f'{t:g}' for t in query.times)}")
        print(f"Increments:  {', '.join(str(k) for k in query.increments)}")
        print(f"Probability: {value:.10f}")
        print(f"Error est.:  {error:.3g}")
    return EXIT_OK


def _emit(report: VerificationReport, config: ScenarioConfig, kind: str, formats) -> list:
    written = report.write(_output_dir(config), _stem(config, kind), formats)
    for path in written:
        logger.info(f"[VERIFY] wrote {path}")
    print(report.to_text(), end="")
    return written


def cmd_verify(args) -> int:
    config = load_config(args)
    scenario = Scenario.from_config(config)
    report = run_full_verification(scenario, threads=config.simulation.threads)
    _emit(report, config, "verify", config.output.formats)
    return EXIT_OK if report.overall else EXIT_VERIFICATION_FAILED


def cmd_assumption_check(args) -> int:
    config = load_config(args)
    scenario = Scenario.from_config(config)
    assumptions = run_assumption_suite(scenario)
    report = VerificationReport(config.name, stamp={"version": __version__,
                                                    "grid_size": config.assumptions.grid_size})
    report.extend(assumption_records(assumptions))
    report.add(run_rate_identity_check(scenario))
    _emit(report, config, "assumptions", config.output.formats)
    return EXIT_OK if report.overall else EXIT_VERIFICATION_FAILED


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="scenario file or shipped name "
                             f"({', '.join(shipped_scenarios(with_aliases=True)) or 'none'})")
    common.add_argument("--seed", type=int, help="override simulation.master_seed")
    common.add_argument("--paths", type=int, help="override simulation.num_paths")
    common.add_argument("--threads", type=int, help="worker threads for path generation")
    common.add_argument("--out", help="output directory (default: $MPP_VERIFIER_OUT or data/reports)")
    common.add_argument("--format", choices=FORMATS, help="report format (default: from the config)")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    common.add_argument("--log-file", type=Path, help="also write the log to this file")

    parser = argparse.ArgumentParser(prog="mpp-verifier",
                                     description="Simulation and numeric verification of mixed Poisson processes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate paths, write a count summary")
    p.add_argument("--dump", action="store_true", help="also write the path dump")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fdd", parents=[common], help="exact finite-dimensional probability")
    p.add_argument("--times", required=True, help="comma-separated increasing times, e.g. 1,2")
    p.add_argument("--counts", required=True, help="comma-separated increments, e.g. 1,0")
    p.set_defaults(handler=cmd_fdd)

    p = sub.add_parser("verify", parents=[common], help="run the equivalence suites")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("assumptions", parents=[common], help="run the assumption checker")
    p.set_defaults(handler=cmd_assumption_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(verbose=args.verbose, log_file=args.log_file)
    try:
        return args.handler(args)
    except MppError as e:
        code = exit_code_for(e)
        print(f"mpp-verifier: error: {e}", file=sys.stderr)
        if isinstance(e, CheckError) and hasattr(e.cause, "diagnostics"):
            print(f"mpp-verifier: diagnostics: {e.cause.diagnostics()}", file=sys.stderr)
        elif hasattr(e, "diagnostics"):
            print(f"mpp-verifier: diagnostics: {e.diagnostics()}", file=sys.stderr)
        return code
