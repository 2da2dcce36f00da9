import logging
import os

from config import EXIT_OK, add_common_arguments, config_from_args
from campc.errors import GeometryError
from campc.model import build_double_integrator
from campc.reach import compute_offline
from campc.serialization import save_offline, save_problem

logger = logging.getLogger(__name__)

PROBLEM_FILE = "problem.json"
OFFLINE_FILE = "offline.json"


def problem_path(out_dir):
    return os.path.join(out_dir, PROBLEM_FILE)


def offline_path(out_dir):
    return os.path.join(out_dir, OFFLINE_FILE)


def build_problem(config, n_v=None):
    return build_double_integrator(n_v=config.n_v if n_v is None else n_v, N=config.N)


def config_echo(config, problem):
    return {
        "config": config.to_dict(),
        "config_checksum": config.checksum(),
        "problem_checksum": problem.checksum(),
    }


def cmd_offline(config):
    """Writes problem.json and offline.json (reach fits, row norms, delta fits) to out_dir."""
    problem = build_problem(config)
    try:
        offline = compute_offline(problem, delta_bound=config.delta_u)
    except GeometryError as e:
        print(f"--- offline stage failed: {e}")
        raise
    save_problem(problem, problem_path(config.out_dir))
    path = save_offline(offline, offline_path(config.out_dir), config=config_echo(config, problem))
    n_backward = 0 if offline.backward is None else len(offline.backward)
    print(f"*** offline artifacts written to {path}: {len(offline.forward)} forward fits, "
          f"{n_backward} backward fits, {problem.total_state_constraints} state constraints")
    return path


def handle(args):
    cmd_offline(config_from_args(args))
    return EXIT_OK


def setup(subparsers):
    parser = subparsers.add_parser("offline", help="precompute reachable-set fits for the double integrator")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
