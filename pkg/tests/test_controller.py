import numpy as np
import pytest

import campc.controller as controller
from campc.controller import (
    CaMpcController,
    IndexSets,
    RemovalReport,
    approx_step,
    check_conditions,
    compute_index_sets,
    delta_rows,
    exact_step,
    first_order_ellipsoid,
    full_step,
    optimality_ellipsoid,
    remove_for_step,
    warm_start,
)
from campc.errors import ConfigError, InfeasibleError
from campc.geometry import Ellipsoid, HPolytope
from campc.oracles import feasible_input_sequence
from campc.reach import compute_offline, delta_input_set


def test_warm_start_shifts_and_appends():
    class Stub:
        m = 1

    assert warm_start(Stub(), None, None, [[-0.5, 0.0]]) is None
    U = warm_start(Stub(), np.array([1.0, 2.0, 3.0]), np.array([2.0, 7.0]), [[-0.5, 0.0]])
    np.testing.assert_allclose(U, [2.0, 3.0, -1.0])


def test_first_order_ellipsoid_passes_through_both_points(rng):
    G = np.triu(rng.standard_normal((3, 3))) + 3.0 * np.eye(3)
    q, U_tilde = rng.standard_normal(3), rng.standard_normal(3)
    E = first_order_ellipsoid(G, q, U_tilde)
    assert E.membership(U_tilde) == pytest.approx(1.0)
    assert E.membership(q) == pytest.approx(1.0)
    assert E.radius == pytest.approx(0.5 * np.linalg.norm(G @ (U_tilde - q)))


def test_first_order_ellipsoid_at_the_unconstrained_minimum():
    E = first_order_ellipsoid(np.eye(2), np.zeros(2), np.zeros(2))
    assert E.regularized
    assert E.contains(np.zeros(2))


def test_constrained_minimizer_lies_in_the_optimality_ellipsoid(small_problem, start_state, rng):
    res = full_step(small_problem, start_state)
    for _ in range(5):
        U_tilde = feasible_input_sequence(rng, small_problem, start_state)
        E = optimality_ellipsoid(small_problem, start_state, U_tilde)
        assert E.contains(res.solution.U_star, 1e-7)


def test_remove_for_step_keeps_fixed_rows():
    X = HPolytope.from_box([-1.0, -1.0], [1.0, 1.0])
    small = Ellipsoid.ball([0.0, 0.0], 0.1)
    removed, counts = remove_for_step(X, np.array([0]), (small, None, small))
    np.testing.assert_array_equal(removed, [1, 2, 3])
    # the first source gets the credit for rows both sources cover
    np.testing.assert_array_equal(counts, [3, 0, 0])


def test_remove_for_step_uses_the_signed_test():
    X = HPolytope([[1.0, 0.0], [1.0, 0.0]], [1.0, -5.0])
    removed, _ = remove_for_step(X, np.zeros(0, dtype=int), (Ellipsoid.ball([0.0, 0.0], 0.5),))
    np.testing.assert_array_equal(removed, [0])


def test_index_sets(small_problem, small_offline, start_state):
    idx, sets = compute_index_sets(small_problem, small_offline, start_state)
    N = small_problem.N
    assert len(sets) == N - 1
    assert len(idx.removed[-1]) == 0
    np.testing.assert_array_equal(idx.fixed[-1], np.arange(small_problem.X[-1].n_rows))
    for i in range(N):
        kept = set(idx.retained[i].tolist())
        gone = set(idx.removed[i].tolist())
        assert not kept & gone
        assert len(kept | gone) == small_problem.row_counts[i]
        assert idx.counts[i].sum() == len(gone)
    assert idx.n_retained + idx.n_removed == small_problem.total_state_constraints
    report = RemovalReport.from_index_sets(idx, small_problem)
    assert report.total_constraints == small_problem.total_state_constraints
    assert 0.0 <= report.percent_retained <= 100.0
    assert sum(report.removed_by_source().values()) == idx.n_removed


def test_full_index_sets(small_problem):
    idx = IndexSets.full(small_problem)
    assert idx.n_removed == 0
    assert idx.n_retained == small_problem.total_state_constraints


def test_exact_step_matches_full_step(small_problem, small_offline, start_state):
    full = full_step(small_problem, start_state)
    cold = exact_step(small_problem, small_offline, start_state)
    np.testing.assert_allclose(cold.solution.U_star, full.solution.U_star, atol=1e-7)
    assert cold.sets[0].opt is None
    warm = exact_step(small_problem, small_offline, start_state, warm=full.solution.U_star)
    np.testing.assert_allclose(warm.solution.U_star, full.solution.U_star, atol=1e-7)
    assert warm.report.total_retained <= cold.report.total_retained
    assert check_conditions(small_problem, start_state, warm.sets, warm.solution.U_star) == (True, True)


def test_infeasible_warm_start_disables_the_optimality_set(small_problem, small_offline, start_state):
    bad = 5.0 * np.ones(small_problem.n_inputs)
    res = exact_step(small_problem, small_offline, start_state, warm=bad)
    assert all(S.opt is None for S in res.sets)
    np.testing.assert_allclose(res.solution.U_star, full_step(small_problem, start_state).solution.U_star, atol=1e-7)


def test_infeasible_state(small_problem, small_offline):
    with pytest.raises(InfeasibleError):
        exact_step(small_problem, small_offline, np.array([20.0, 20.0]))
    with pytest.raises(InfeasibleError):
        full_step(small_problem, np.array([20.0, 20.0]))


def test_approx_step_stays_near_the_warm_start(small_problem, small_offline, start_state):
    ctrl = CaMpcController(small_problem, small_offline, "exact")
    first = ctrl.step(start_state)
    x1 = small_problem.sys.step(start_state, first.u)
    U_tilde = ctrl.shifted_warm_start()
    deltaU = delta_input_set(small_problem.m, 0.3)
    res = approx_step(small_problem, small_offline, x1, U_tilde, deltaU)
    assert res.mode == "approx"
    assert np.all(np.abs(res.solution.U_star - U_tilde) <= 0.3 + 1e-8)
    assert res.report.total_retained <= small_problem.total_state_constraints


def test_delta_rows(small_problem):
    U_tilde = np.linspace(-0.5, 0.5, small_problem.n_inputs)
    M, d, tags = delta_rows(small_problem, U_tilde, delta_input_set(1, 0.2))
    assert M.shape == (2 * small_problem.N, small_problem.n_inputs)
    assert np.all(M @ U_tilde <= d)
    assert tags[0] == ("delta", 0, 0)


class TestController:
    def test_mode_validation(self, small_problem, small_offline):
        with pytest.raises(ConfigError):
            CaMpcController(small_problem, small_offline, "fast")
        with pytest.raises(ConfigError):
            CaMpcController(small_problem, None, "exact")
        with pytest.raises(ConfigError):
            CaMpcController(small_problem, small_offline, "approx")
        with pytest.raises(ConfigError):
            CaMpcController(small_problem, small_offline, "approx", delta_bound=0.5)

    def test_approx_needs_delta_fits(self, small_problem):
        offline = compute_offline(small_problem)
        with pytest.raises(ConfigError):
            CaMpcController(small_problem, offline, "approx", delta_bound=0.3)

    def test_first_step_is_cold_then_warm(self, small_problem, small_offline, start_state):
        ctrl = CaMpcController(small_problem, small_offline, "approx", delta_bound=0.3)
        first = ctrl.step(start_state)
        assert first.mode == "exact" and first.U_tilde is None
        second = ctrl.step(small_problem.sys.step(start_state, first.u))
        assert second.U_tilde is not None
        ctrl.reset()
        assert ctrl.shifted_warm_start() is None


def test_negated_removal_test_is_caught_by_the_audit(small_problem, small_offline, start_state, monkeypatch):
    from campc.sim import audit_step

    real = controller.covered_rows
    monkeypatch.setattr(controller, "covered_rows", lambda C, b, E, norms=None: ~real(C, b, E, norms))
    res = exact_step(small_problem, small_offline, start_state)
    assert res.index_sets.n_removed > 0
    audit = audit_step(small_problem, start_state, res.sets, res.index_sets, res.solution)
    assert not audit.c3
