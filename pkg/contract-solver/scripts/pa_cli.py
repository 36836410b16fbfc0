#!/usr/bin/env python3
"""
pa - principal-agent contract solver CLI

Usage:
    pa solve --config configs/euro_quadratic.json
    pa simulate --config configs/sannikov.json --seed 7 --out runs/s7
    pa firstbest --config configs/first_best_canonical.json --format json

Every command prints a JSON result on stdout and exits with
0 (success), 1 (config or precondition error), 2 (solver failure) or 3 (audit failure).
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from pa_common import ConfigError, error_response, to_builtin
from pa_commands import firstbest, simulate, solve

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class _Parser(argparse.ArgumentParser):
    """Argument errors are config errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigError(message, suggestion=f"Run '{self.prog} --help' for usage.")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='pa', description='Principal-agent contract solver')
    parser.add_argument('--verbose', '-v', action='store_true', help='Log progress at INFO level')
    subparsers = parser.add_subparsers(dest='command')
    for module in (solve, simulate, firstbest):
        module.register(subparsers)
    return parser


def emit(result: dict) -> None:
    print(json.dumps(to_builtin(result), indent=2, sort_keys=True))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        result = error_response(e, "arguments")
        emit(result)
        return result["exit_code"]

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    if not getattr(args, 'func', None):
        parser.print_help(sys.stderr)
        return 1

    result = args.func(args)
    emit(result)
    if not result.get("success"):
        logger.warning(f"{args.command} failed: {result.get('error')}")
    return int(result.get("exit_code", 0 if result.get("success") else 1))


if __name__ == '__main__':
    sys.exit(main())
