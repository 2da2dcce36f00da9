from config import EXIT_OK
from database import get_db_manager


def cmd_history(limit=10, db_manager=None):
    db = db_manager if db_manager is not None else get_db_manager()
    if db is None:
        print("-- run registry unavailable")
        return {"runs": [], "sweep_points": [], "verify_runs": []}
    history = {
        "runs": db.recent_runs(limit),
        "sweep_points": db.recent_sweep_points(limit),
        "verify_runs": db.recent_verify_runs(limit),
    }
    for r in history["runs"]:
        print(f"run {r['id']} {r['created_at']:%Y-%m-%d %H:%M} {r['variant']:6} n_v={r['n_v']} N={r['N']} "
              f"max={r['max_step_time_us']:.0f}us retained={r['average_retained_percent']:.1f}% "
              f"violations={r['violations']}")
    for p in history["sweep_points"]:
        status = p["error"] or f"max={p['max_step_time_us']:.0f}us"
        print(f"sweep {p['id']} n_v={p['n_v']} {p['variant']:6} {p['total_constraints']} constraints {status}")
    for v in history["verify_runs"]:
        print(f"verify {v['id']} seed={v['seed']} {v['suite']}: {v['passed']} passed, {v['failed']} failed")
    return history


def handle(args):
    cmd_history(args.limit)
    return EXIT_OK


def setup(subparsers):
    parser = subparsers.add_parser("history", help="most recent rows of the run registry")
    parser.add_argument("--limit", type=int, default=10)
    parser.set_defaults(handler=handle)
