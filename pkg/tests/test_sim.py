from dataclasses import replace

import numpy as np
import pytest

from campc.controller import CaMpcController
from campc.errors import ConfigError, DimensionError, InfeasibleError
from campc.sim import ClosedLoopTrace, RunConfig, compare_traces, input_violation, resolve_initial_state, simulate

STEPS = 8


@pytest.fixture(scope="module")
def traces(small_problem, small_offline, start_state):
    x0 = tuple(start_state)
    return {
        "full": simulate(small_problem, small_offline, RunConfig("full", x0, STEPS)),
        "exact": simulate(small_problem, small_offline, RunConfig("exact", x0, STEPS, verify=True)),
        "approx": simulate(small_problem, small_offline, RunConfig("approx", x0, STEPS, deltaU=0.3)),
    }


class TestRunConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            RunConfig("fastest", (0.0, 0.0))
        with pytest.raises(ConfigError):
            RunConfig("full", (0.0, 0.0), steps=0)
        with pytest.raises(ConfigError):
            RunConfig("approx", (0.0, 0.0))
        with pytest.raises(ConfigError):
            RunConfig("exact", (0.0, 0.0), deltaU=0.3)
        with pytest.raises(ConfigError):
            RunConfig("approx", (0.0, 0.0), deltaU=-0.1)

    def test_x0_is_stored_as_floats(self):
        assert RunConfig("full", [1, 2]).x0 == (1.0, 2.0)


def test_exact_trace_equals_full_trace(traces):
    cmp = compare_traces(traces["exact"], traces["full"])
    assert cmp.equal
    assert len(cmp.state_deviation) == STEPS + 1
    assert cmp.to_dict()["equal"] is True
    assert cmp.max_value_deviation <= 1e-7


def test_value_deviation_breaks_equality(traces):
    full = traces["full"]
    shifted = ClosedLoopTrace(
        full.config,
        steps=[replace(s, value=s.value + 1e-3 * max(1.0, abs(s.value))) for s in full.steps],
        final_state=full.final_state,
    )
    cmp = compare_traces(shifted, full)
    assert cmp.max_state_deviation == 0.0
    assert cmp.max_input_deviation == 0.0
    assert cmp.max_value_deviation == pytest.approx(1e-3)
    assert not cmp.equal


def test_exact_run_drops_constraints_after_the_first_step(traces):
    exact = traces["exact"]
    assert all(p <= 100.0 for p in exact.retained_percentages)
    assert np.mean(exact.retained_percentages[1:]) < 100.0


def test_exact_run_passes_its_audits(traces):
    tallies = traces["exact"].audit_tallies()
    assert tallies["audited"] == STEPS
    assert tallies["c1_failures"] == tallies["c2_failures"] == tallies["c3_failures"] == 0


def test_no_variant_violates_the_state_constraints(traces):
    for trace in traces.values():
        assert not trace.halted
        assert len(trace) == STEPS
        assert trace.violations(tol=1e-7) == 0
        assert trace.max_input_violation <= 1e-9


def test_input_violation(small_problem):
    u_max = float(small_problem.U.b[0])
    assert input_violation(small_problem, [u_max + 0.5]) == pytest.approx(0.5)
    assert input_violation(small_problem, [0.2 * u_max]) < 0.0


def test_approx_run_retains_fewer_constraints_than_full(traces):
    full, approx = traces["full"], traces["approx"]
    assert all(p == pytest.approx(100.0) for p in full.retained_percentages)
    assert np.mean(approx.retained_percentages[1:]) < 100.0


def test_closed_loop_states_follow_the_model(small_problem, traces):
    trace = traces["exact"]
    for k in range(STEPS):
        np.testing.assert_allclose(
            trace.states[k + 1], small_problem.sys.step(trace.states[k], trace.inputs[k]), atol=1e-12
        )


def test_summary(traces):
    summary = traces["approx"].summary()
    assert summary["variant"] == "approx"
    assert summary["steps"] == STEPS
    assert summary["config"]["deltaU"] == pytest.approx(0.3)
    assert len(summary["retained_percent"]) == STEPS
    for key in ("max_step_time_us", "median_step_time_us", "average_retained_percent", "audits"):
        assert key in summary


def test_compare_traces_needs_equal_lengths(small_problem, small_offline, start_state, traces):
    short = simulate(small_problem, small_offline, RunConfig("full", tuple(start_state), 2))
    with pytest.raises(DimensionError):
        compare_traces(short, traces["full"])


class TestInitialState:
    def test_feasible_state_is_kept(self, small_problem):
        x0, factor = resolve_initial_state(small_problem, (0.0, 0.0), "strict")
        np.testing.assert_allclose(x0, [0.0, 0.0])
        assert factor == 1.0

    def test_strict_policy_raises(self, small_problem):
        with pytest.raises(InfeasibleError, match="x0 infeasible"):
            resolve_initial_state(small_problem, (20.0, 20.0), "strict")

    def test_scale_policy_moves_towards_the_origin(self, small_problem):
        from campc.model import is_feasible_state

        x0, factor = resolve_initial_state(small_problem, (20.0, 20.0), "scale")
        assert 0.0 < factor < 1.0
        np.testing.assert_allclose(x0, factor * np.array([20.0, 20.0]))
        assert is_feasible_state(small_problem, x0)

    def test_unknown_policy(self, small_problem):
        with pytest.raises(ConfigError):
            resolve_initial_state(small_problem, (20.0, 20.0), "clip")


def test_simulate_rejects_infeasible_or_malformed_x0(small_problem, small_offline):
    with pytest.raises(InfeasibleError, match="x0 infeasible"):
        simulate(small_problem, small_offline, RunConfig("exact", (20.0, 20.0), 3))
    with pytest.raises(DimensionError):
        simulate(small_problem, small_offline, RunConfig("full", (0.0, 0.0, 0.0), 3))


class FailingController:
    """Delegates to a real controller until ``fail_at``, then reports an infeasible QP."""

    def __init__(self, controller, fail_at):
        self.controller = controller
        self.fail_at = fail_at
        self.calls = 0

    def step(self, x):
        if self.calls == self.fail_at:
            raise InfeasibleError("no feasible input sequence")
        self.calls += 1
        return self.controller.step(x)


def test_infeasible_step_halts_the_run(small_problem, small_offline, start_state):
    controller = FailingController(CaMpcController(small_problem, small_offline, "exact"), fail_at=2)
    trace = simulate(small_problem, small_offline, RunConfig("exact", tuple(start_state), 5), controller)
    assert trace.halted
    assert trace.infeasible_step == 2
    assert len(trace) == 2
    summary = trace.summary()
    assert summary["infeasible_steps"] == 1
    assert summary["infeasible_step"] == 2
    assert summary["message"] == "infeasible at step 2"
