import logging

from config import EXIT_OK, EXIT_VERIFY, environment_values
from database import get_db_manager
from campc.errors import ConfigError
from campc.oracles import run_all

logger = logging.getLogger(__name__)


def cmd_verify(seed, cases, db_manager=None):
    """Runs the randomized oracle suites; returns (suite results, exit code)."""
    if cases < 1:
        raise ConfigError(f"cases must be >= 1, got {cases}")
    results = run_all(seed, cases)
    for r in results:
        prefix = "***" if r.ok else "---"
        print(f"{prefix} {r.name}: {r.passed} passed, {r.failed} failed, {r.skipped} skipped")
        for note in r.failures:
            print(f"    {note}")

    db = db_manager if db_manager is not None else get_db_manager()
    if db is not None:
        db.record_verify(seed, cases, [r.to_dict() for r in results])
    return results, EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


def handle(args):
    seed = args.seed if args.seed is not None else environment_values().get("seed", 0)
    _, code = cmd_verify(seed, args.cases)
    return code


def setup(subparsers):
    parser = subparsers.add_parser("verify", help="randomized exactness and geometry checks")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--cases", type=int, default=100, help="random instances per suite")
    parser.set_defaults(handler=handle)
