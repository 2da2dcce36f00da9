import logging
import os

from config import EXIT_NUMERICAL, EXIT_OK, EXIT_VERIFY, add_common_arguments, config_from_args
from database import get_db_manager
from campc.errors import ArtifactMismatchError
from campc.reach import ensure_matches
from campc.serialization import load_offline, write_json, write_trace_csv
from campc.sim import RunConfig, compare_traces, resolve_initial_state, simulate
from commands.offline import build_problem, config_echo, offline_path

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
EQUALITY_TOL = 1e-6


def trace_path(out_dir, variant):
    return os.path.join(out_dir, f"trace_{variant}.csv")


def load_artifacts(config):
    problem = build_problem(config)
    path = offline_path(config.out_dir)
    if not os.path.exists(path):
        raise ArtifactMismatchError(f"no offline artifact at {path}; run the offline command first")
    return problem, ensure_matches(problem, load_offline(path))


def cmd_run(config, db_manager=None):
    """Simulates every configured variant; returns (summary, exit code)."""
    problem, offline = load_artifacts(config)
    x0, factor = resolve_initial_state(problem, config.x0, config.x0_policy)
    if factor < 1.0:
        print(f"-- x0 {list(config.x0)} infeasible, scaled by {factor:.4f} to {x0.tolist()}")

    echo = config_echo(config, problem)
    echo["x0_effective"] = x0.tolist()
    traces = {}
    for variant in config.variants:
        run_config = RunConfig(
            variant=variant,
            x0=tuple(x0),
            steps=config.steps,
            deltaU=config.delta_u if variant == "approx" else None,
            verify=config.verify_invariants,
            seed=config.seed,
        )
        trace = simulate(problem, offline, run_config)
        traces[variant] = trace
        write_trace_csv(trace, trace_path(config.out_dir, variant), problem.n, problem.m,
                        echo=dict(echo, variant=variant))

    summary = dict(echo)
    summary["x0_scale"] = factor
    summary["total_state_constraints"] = problem.total_state_constraints
    summary["variants"] = {v: t.summary() for v, t in traces.items()}
    comparisons = {}
    for variant in ("exact", "approx"):
        if variant in traces and "full" in traces and len(traces[variant]) == len(traces["full"]):
            comparisons[f"{variant}_vs_full"] = compare_traces(traces[variant], traces["full"], EQUALITY_TOL).to_dict()
    if comparisons:
        summary["comparisons"] = comparisons
    write_json(os.path.join(config.out_dir, SUMMARY_FILE), summary)

    db = db_manager if db_manager is not None else get_db_manager()
    if db is not None:
        for s in summary["variants"].values():
            db.record_run(echo["config_checksum"], echo["problem_checksum"], config.n_v, config.N, s)

    code = EXIT_OK
    for variant, s in summary["variants"].items():
        audits = s["audits"]
        failures = audits["c1_failures"] + audits["c2_failures"] + audits["c3_failures"]
        if failures:
            print(f"--- {variant}: {failures} audit failures over {audits['audited']} audited steps")
            code = EXIT_VERIFY
        if s["halted"]:
            print(f"--- {variant}: {s['message']}")
            code = max(code, EXIT_NUMERICAL)
        else:
            print(f"*** {variant}: {s['steps']} steps, {s['violations']} violations, "
                  f"{s['average_retained_percent']:.1f}% constraints retained, "
                  f"max step {s['max_step_time_us']:.0f}us")
    exact = comparisons.get("exact_vs_full")
    if exact is not None:
        if exact["equal"]:
            print(f"*** exact matches full within {EQUALITY_TOL:g} (max state deviation {exact['max_state_deviation']:.2e})")
        else:
            print(f"--- exact deviates from full: max state deviation {exact['max_state_deviation']:.2e}")
            code = EXIT_VERIFY if code == EXIT_OK else code
    return summary, code


def handle(args):
    _, code = cmd_run(config_from_args(args))
    return code


def setup(subparsers):
    parser = subparsers.add_parser("run", help="closed-loop runs of the configured variants")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
