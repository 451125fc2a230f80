"""
Command-line entry point: python -m src.main <command> [options]
"""
import argparse
import asyncio
import sys

from src.config import settings
from src.services.artifacts import dumps
from src.services.commands import EXIT_USAGE, CommandResult, commands
from src.services.logging_config import setup_logging
from src import handlers  # noqa: F401  registers the subcommands

GAS_ACTIONS = ("check", "simulate", "converge", "crosscheck")


def _eps_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.replace(";", ",").split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--eps expects comma-separated numbers, got {text!r}") from e


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="TOML run configuration")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    parser.add_argument("--eps", type=_eps_list, metavar="LIST", help="comma-separated epsilon values, decreasing")
    parser.add_argument("--threads", type=int, metavar="N", help="concurrent epsilon runs")
    parser.add_argument("--seed", type=int, metavar="U64", help="seed of every sampling RNG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyrelax", description=settings.APP_NAME)
    parser.add_argument("--log-json", action="store_true", default=None, help="JSON log lines on stderr")
    parser.add_argument("--log-level", help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", metavar="command")

    for name in ("check-model", "simulate", "converge", "selftest"):
        _common(sub.add_parser(name, help=commands.description(name)))

    gas = sub.add_parser("gas", help="Eulerian gas dynamics with pressure relaxation")
    gas.add_argument("action", choices=GAS_ACTIONS)
    _common(gas)
    return parser


def _emit(result: CommandResult):
    if result.payload is not None:
        sys.stdout.write(dumps(result.payload))
    if result.message:
        sys.stderr.write(result.message + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return int(e.code or 0)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    setup_logging(json_format=args.log_json, level=args.log_level)
    name = f"gas-{args.action}" if args.command == "gas" else args.command
    result = asyncio.run(
        commands.handle(name, config=args.config, out=args.out, eps=args.eps, threads=args.threads, seed=args.seed)
    )
    _emit(result)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
