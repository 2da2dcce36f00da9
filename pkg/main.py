import argparse
import importlib
import logging
import os
import sys

from config import CAMPC_LOG_LEVEL, EXIT_NUMERICAL, EXIT_USAGE, EXIT_VERIFY
from campc.errors import CampcError, ConfigError, ExactnessViolation

COMMANDS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "commands")


class UsageError(Exception):
    pass


class HarnessParser(argparse.ArgumentParser):
    # argparse exits on bad usage; we want our own exit code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load(subparsers):
    """loading all .py files in the commands folder"""
    loaded = []
    for filename in sorted(os.listdir(COMMANDS_DIR)):
        if filename.endswith(".py") and not filename.startswith("_"):
            module = importlib.import_module(f"commands.{filename[:-3]}")
            module.setup(subparsers)
            loaded.append(filename[:-3])
    return loaded


def build_parser():
    parser = HarnessParser(
        prog="campc",
        description="Constraint-adaptive MPC: offline precomputation, closed-loop runs, sweeps and verification",
    )
    subparsers = parser.add_subparsers(dest="command", parser_class=HarnessParser)
    load(subparsers)
    return parser


def configure_logging(level=CAMPC_LOG_LEVEL):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv=None):
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"--- {e}")
        return EXIT_USAGE
    if not getattr(args, "handler", None):
        parser.print_help()
        return EXIT_USAGE

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"--- config error: {e}")
        return EXIT_USAGE
    except ExactnessViolation as e:
        print(f"--- exactness violated: {e}")
        return EXIT_VERIFY
    except CampcError as e:
        print(f"--- {type(e).__name__}: {e}")
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        print("-- stopped manually.")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
