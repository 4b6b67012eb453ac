"""Command-line interface for reservoir-gradient experiments."""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from .config import COMMANDS, Config, RunConfig, flag_names, render_config
from .errors import ConfigError, ResgradError
from .experiments import ExperimentRunner

logger = logging.getLogger(__name__)

# Options that steer the CLI itself rather than the experiment
_CLI_ONLY = {"command", "config", "save_config", "log_level"}


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting on bad input."""

    def error(self, message):
        raise ConfigError(message)


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float list: '{text}'") from None


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    # Every default is None so that only explicitly given flags override the file
    parser.add_argument("--config", help="Config file, key = value per line (keys mirror flag names)")
    parser.add_argument("--system", choices=["dho", "duffing", "vdp"], help="System (default dho)")
    parser.add_argument("--b", type=float, help="Damping constant (default 0.1)")
    parser.add_argument("--k", type=float, help="Oscillator stiffness (default 1)")
    parser.add_argument("--mu", type=float, help="Van der Pol parameter (default 1)")
    parser.add_argument("--alpha", type=float, help="Duffing linear stiffness (default 1)")
    parser.add_argument("--beta", type=float, help="Duffing cubic stiffness (default 1)")
    parser.add_argument(
        "--integrator",
        action="append",
        help="moddg[:none|q3|q4|p3|p4], pqplf or erk4; repeatable or comma-separated",
    )
    parser.add_argument("--q0", type=float, help="Initial coordinate (default 2.3)")
    parser.add_argument("--p0", type=float, help="Initial momentum (default -3.1)")
    parser.add_argument("--w0", type=float, help="Initial reservoir value (default 0)")
    parser.add_argument("--h", type=float, help="Time step (default 0.01)")
    parser.add_argument("--h0", type=float, help="Base grid step (default 0.001)")
    parser.add_argument("--h-set", type=_float_list, help="Comma-separated measurement steps")
    parser.add_argument("--t-end", type=float, help="Horizon (default 20)")
    parser.add_argument("--steps", type=int, help="Number of steps (overrides t-end / h)")
    parser.add_argument("--fp-tol", type=float, help="Fixed-point tolerance (default 1e-14)")
    parser.add_argument("--fp-max-iter", type=int, help="Fixed-point iteration cap (default 500)")
    parser.add_argument(
        "--delta-guard",
        type=float,
        help="Delta denominator guard (default 1e-6 max(1,|q|,|p|); order uses 3e-3)",
    )
    parser.add_argument("--workers", type=int, help="Threads for per-h measurements (default 1)")
    parser.add_argument("--out", help="Output directory (default results)")
    parser.add_argument("--save-config", help="Also write the resolved configuration here")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments.

    Args:
        args: Command-line arguments (defaults to sys.argv[1:])

    Returns:
        Parsed arguments
    """
    parser = _ArgumentParser(
        prog="resgrad",
        allow_abbrev=False,
        description="Reservoir discrete gradient integrators for dissipative systems",
    )
    subparsers = parser.add_subparsers(dest="command", help="Command to execute")
    subparsers.required = True

    helps = {
        "simulate": "Integrate trajectories and write step,t,q,p,w,K,E,R",
        "order": "Measure empirical orders on the base-grid protocol",
        "compare": "Compare schemes: K drift, energy-ratio deviation, local errors",
        "exact": "Write the closed-form oscillator trajectory",
    }
    for command in COMMANDS:
        _add_run_options(
            subparsers.add_parser(command, help=helps[command], allow_abbrev=False)
        )

    return parser.parse_args(args)


def _flag_values(args: argparse.Namespace) -> Dict[str, Any]:
    values = {
        key: value
        for key, value in vars(args).items()
        if key not in _CLI_ONLY and value is not None
    }
    if "integrator" in values:
        values["integrator"] = [
            item.strip() for entry in values["integrator"] for item in entry.split(",") if item.strip()
        ]
    return values


def _file_values(config: Config) -> Dict[str, Any]:
    names = flag_names()
    values = {}
    for key, value in config.as_dict().items():
        field = names.get(str(key)) or (key if key in RunConfig.model_fields else None)
        if field is None or field == "command":
            raise ConfigError(f"Unknown config key '{key}'", str(key))
        values[field] = value
    return values


def _validation_message(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    token = ".".join(str(part) for part in first.get("loc", ())) or None
    message = first.get("msg", str(error))
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]
    elif token:
        message = f"{token}: {message}"
    return ConfigError(message, token)


def parse_config(argv: List[str], config_text: Optional[str] = None) -> RunConfig:
    """Resolve a run configuration from flags and an optional config file.

    File values are applied first and flags override them. The file is either
    given as text or named by --config.

    Args:
        argv: Command and flags, e.g. ["order", "--integrator", "moddg:q3"]
        config_text: Config file contents

    Returns:
        Fully resolved configuration with defaults applied

    Raises:
        ConfigError: Unknown flag or key, malformed value, violated invariant
    """
    args = parse_args(argv)
    if config_text is not None:
        file_config = Config.from_text(config_text)
    elif args.config:
        file_config = Config(args.config)
    else:
        file_config = Config()

    values = {"command": args.command, **_file_values(file_config), **_flag_values(args)}
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise _validation_message(e) from None


def _print_summary(config: RunConfig, summary: Dict[str, Any], written: List[str]) -> None:
    print(f"{config.command} on {config.system} (h={config.h:g}):")
    for label, values in summary.items():
        details = ", ".join(
            f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
            for key, value in values.items()
        )
        print(f"  - {label}: {details}")
    for path in written:
        print(f"  wrote {path}")


def run(config: RunConfig) -> int:
    """Run an experiment.

    Args:
        config: Resolved configuration

    Returns:
        Exit status: 0 on success, 1 when the experiment failed
    """
    try:
        runner = ExperimentRunner(config)
        summary = runner.run()
    except (ResgradError, ValueError) as e:
        where = f"command={config.command}, h={config.h:g}"
        t = getattr(e, "t", None)
        if t is not None:
            where += f", t={t:.6g}"
        print(f"Error ({where}): {e}")
        return 1
    _print_summary(config, summary, runner.written)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(
            level=getattr(logging, args.log_level),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        config = parse_config(argv)
    except ConfigError as e:
        print(f"Error: {e}")
        print("Run with --help for usage information.")
        return 2

    if args.save_config:
        saved = Config.from_text(render_config(config))
        saved.config_path = args.save_config
        saved.save()
        print(f"Configuration saved to {args.save_config}")

    return run(config)


if __name__ == "__main__":
    sys.exit(main())
