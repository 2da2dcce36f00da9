import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

from config import EXIT_NUMERICAL, EXIT_OK, BenchmarkConfig, add_common_arguments, config_from_args
from database import get_db_manager
from campc.reach import compute_offline
from campc.sim import RunConfig, resolve_initial_state, simulate
from commands.offline import build_problem

logger = logging.getLogger(__name__)

SWEEP_FILE = "sweep.csv"
SWEEP_COLUMNS = (
    "n_v", "total_constraints", "full_max_us", "exact_max_us",
    "exact_index_max_us", "exact_qp_max_us", "full_median_us", "exact_median_us", "error",
)


def fragment_path(out_dir, n_v):
    return os.path.join(out_dir, "sweep_points", f"point_{n_v:05d}.csv")


def run_sweep_point(config_doc, n_v):
    """One sweep point: full and exact closed loops on the same problem. Runs inside a worker."""
    config = BenchmarkConfig(**config_doc)
    row = {"n_v": n_v, "total_constraints": "", "error": ""}
    try:
        problem = build_problem(config, n_v=n_v)
        row["total_constraints"] = problem.total_state_constraints
        offline = compute_offline(problem)
        x0, _ = resolve_initial_state(problem, config.x0, config.x0_policy)
        for variant in ("full", "exact"):
            trace = simulate(problem, offline, RunConfig(variant, tuple(x0), config.sweep_steps, seed=config.seed))
            s = trace.summary()
            row[f"{variant}_max_us"] = f"{s['max_step_time_us']:.1f}"
            row[f"{variant}_median_us"] = f"{s['median_step_time_us']:.1f}"
            if variant == "exact":
                row["exact_index_max_us"] = f"{s['max_index_time_us']:.1f}"
                row["exact_qp_max_us"] = f"{s['max_qp_time_us']:.1f}"
    except Exception as e:
        # a failing point is recorded, the sweep continues
        logger.exception("sweep point n_v=%d failed", n_v)
        row["error"] = f"{type(e).__name__}: {e}"
    path = fragment_path(config.out_dir, n_v)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, restval="")
        writer.writerow(row)
    return row


def merge_fragments(config, echo):
    path = os.path.join(config.out_dir, SWEEP_FILE)
    with open(path, "w", newline="", encoding="utf-8") as out:
        out.write("# " + json.dumps(echo, sort_keys=True) + "\n")
        writer = csv.writer(out)
        writer.writerow(SWEEP_COLUMNS)
        for n_v in sorted(set(config.sweep)):
            with open(fragment_path(config.out_dir, n_v), newline="", encoding="utf-8") as f:
                for line in csv.reader(f):
                    writer.writerow(line)
    return path


def cmd_sweep(config, db_manager=None):
    """Timing table over config.sweep; returns (rows in n_v order, exit code)."""
    doc = config.to_dict()
    points = sorted(set(config.sweep))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(run_sweep_point, [doc] * len(points), points))
    else:
        rows = [run_sweep_point(doc, n_v) for n_v in points]

    echo = {"config": doc, "config_checksum": config.checksum()}
    path = merge_fragments(config, echo)

    db = db_manager if db_manager is not None else get_db_manager()
    failed = 0
    for row in rows:
        if row["error"]:
            failed += 1
            print(f"--- n_v={row['n_v']}: {row['error']}")
        else:
            print(f"*** n_v={row['n_v']} ({row['total_constraints']} constraints): "
                  f"full {row['full_max_us']}us, exact {row['exact_max_us']}us "
                  f"(index {row['exact_index_max_us']}us, qp {row['exact_qp_max_us']}us)")
        if db is not None:
            for variant in ("full", "exact"):
                db.record_sweep_point(echo["config_checksum"], {
                    "n_v": row["n_v"],
                    "variant": variant,
                    "total_constraints": row["total_constraints"] or 0,
                    "max_step_time_us": _number(row.get(f"{variant}_max_us")),
                    "max_index_time_us": _number(row.get("exact_index_max_us")) if variant == "exact" else None,
                    "max_qp_time_us": _number(row.get("exact_qp_max_us")) if variant == "exact" else None,
                    "error": row["error"],
                })
    print(f"*** sweep table written to {path}")
    return rows, EXIT_NUMERICAL if failed else EXIT_OK


def _number(value):
    return float(value) if value not in (None, "") else None


def handle(args):
    # --sweep, --sweep-steps and --workers are config keys, picked up by config_from_args
    _, code = cmd_sweep(config_from_args(args))
    return code


def setup(subparsers):
    parser = subparsers.add_parser("sweep", help="per-step timings over a list of n_v values")
    add_common_arguments(parser)
    parser.add_argument("--sweep", help="comma separated n_v values")
    parser.add_argument("--sweep-steps", dest="sweep_steps", type=int, help="closed-loop steps per point")
    parser.add_argument("--workers", type=int, help="worker processes")
    parser.set_defaults(handler=handle)
