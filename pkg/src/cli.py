"""
Command-Line Interface

Batch front-end: parses flags (over an optional JSON/TOML config file),
validates the resolved ExperimentConfig, runs it and writes deterministic
output. Exit codes: 0 success, 1 validation/usage error, 2 failed verdict.
"""

import argparse
import logging
import sys
from typing import Any

from pydantic import ValidationError

from src import __version__
from src.config import ExperimentConfig, parse_float_list, parse_int_list
from src.errors import ConfigError, DGFFError
from src.parser import read_config_file, write_result
from src.runner import ExperimentRunner

logger = logging.getLogger(__name__)


class UsageError(ConfigError):
    """Malformed command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(value: str) -> list[int]:
    try:
        return parse_int_list(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _float_list(value: str) -> list[float]:
    try:
        return parse_float_list(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _kappa(value: str) -> int | str:
    if value == "auto":
        return value
    try:
        return int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("kappa must be an integer or 'auto'") from exc


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or TOML config file (flags override it)")
    parser.add_argument("--profile", help="preset name or profile file (JSON/TOML)")
    parser.add_argument("--sigmas", type=_float_list, help="inline profile: sigma_1,...,sigma_M")
    parser.add_argument("--lambdas", type=_float_list, help="inline profile: lambda_1,...,lambda_M")
    parser.add_argument("--n", dest="n_list", type=_int_list, help="grid exponent(s): 4, 3,5 or 3..6")
    parser.add_argument("--seed", type=int, help="experiment seed (required for stochastic runs)")
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--threads", type=int, help="worker cap; results do not depend on it")
    parser.add_argument("--output", help="result file (field dump for 'sample')")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgff", description="Extremes of the scale-inhomogeneous DGFF")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    profile = sub.add_parser("profile", help="effective profile and centring table")
    _common(profile)
    profile.add_argument("--kappa", type=_kappa, help="also build the comparison profile")

    sample = sub.add_parser("sample", help="draw one field and optionally dump it")
    _common(sample)
    sample.add_argument("--kind", choices=("dgff", "psi", "ibrw", "mibrw", "tmibrw"))
    sample.add_argument("--k0", type=int)
    sample.add_argument("--kappa", type=_kappa)

    cov = sub.add_parser("cov-check", help="measure covariance-lemma constants over n")
    _common(cov)
    cov.add_argument("--lemma", choices=("cov_comp", "increment"))
    cov.add_argument("--items", type=lambda s: [part.strip() for part in s.split(",") if part.strip()])
    cov.add_argument("--delta", type=float)
    cov.add_argument("--slope-tolerance", type=float)
    cov.add_argument("--checkpoint", help="directory for per-n partial results")

    compare = sub.add_parser("compare", help="Gaussian comparison couplings")
    _common(compare)
    compare.add_argument("--direction", choices=("upper", "lower", "mean-upper", "mean-lower"))
    compare.add_argument("--kappa", type=_kappa)
    compare.add_argument("--lambda-grid", type=_float_list)

    tails = sub.add_parser("tails", help="tails of the maximum and fitted rates")
    _common(tails)
    tails.add_argument("--kind", choices=("dgff", "psi", "ibrw", "mibrw", "tmibrw"))
    tails.add_argument("--k0", type=int)
    tails.add_argument("--kappa", type=_kappa)
    tails.add_argument("--x-grid", type=_float_list)
    tails.add_argument("--lambda-grid", type=_float_list)
    tails.add_argument("--recentre", action="store_true", default=None)
    tails.add_argument("--tightness", action="store_true", default=None)
    tails.add_argument("--slope-tolerance", type=float)

    second = sub.add_parser("second-moment", help="path events and the Paley-Zygmund bound")
    _common(second)
    second.add_argument("--y-grid", type=_float_list)
    second.add_argument("--cf", type=float)
    second.add_argument("--method", choices=("monte-carlo", "semi-analytic"))
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Merge defaults < config file < flags into a validated config.

    Raises:
        ConfigError: If the config file is unreadable or the profile flags are incomplete
        ValidationError: If a value violates a precondition
    """
    values: dict[str, Any] = read_config_file(args.config) if args.config else {}
    skip = {"config", "sigmas", "lambdas", "log_level", "command"}
    for key, value in vars(args).items():
        if key not in skip and value is not None:
            values[key] = value
    if (args.sigmas is None) != (args.lambdas is None):
        raise ConfigError("--sigmas and --lambdas must be given together")
    if args.sigmas is not None:
        values["profile"] = {"sigmas": args.sigmas, "lambdas": args.lambdas}
    values["command"] = args.command
    return ExperimentConfig(**values)


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        result = ExperimentRunner(config).run()
    except ValidationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    except DGFFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    target = None if config.command == "sample" else config.output
    text = write_result(result.payload, result.table, target, config.format)
    if target is None:
        sys.stdout.write(text)
    if not result.passed:
        print(f"{config.command}: verdict failed", file=sys.stderr)
    return result.exit_code
