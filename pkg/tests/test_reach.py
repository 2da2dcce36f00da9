import numpy as np
import pytest

from campc.errors import ArtifactMismatchError, DimensionError, GeometryError
from campc.geometry import HPolytope, VertexSet, Zonotope
from campc.model import LtiSystem, build_double_integrator
from campc.reach import (
    backward_reach,
    compute_offline,
    ensure_matches,
    fit_forward,
    forward_reach,
    input_set_carrier,
    row_certificate,
)

UNIT_INPUT = HPolytope.from_box([-1.0], [1.0])


def test_input_set_carrier():
    assert isinstance(input_set_carrier(UNIT_INPUT), Zonotope)
    tri = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    assert isinstance(input_set_carrier(tri), VertexSet)
    with pytest.raises(GeometryError):
        input_set_carrier(HPolytope([[1.0]], [1.0]))


def test_first_forward_set_is_b_times_u(small_problem):
    sets = forward_reach(small_problem.sys, small_problem.U, 3)
    assert len(sets) == 3
    assert sets[0].support([0.0, 1.0]) == pytest.approx(0.1)
    assert sets[0].support([1.0, 0.0]) == pytest.approx(0.005)
    # H_2 = A H_1 + B U
    assert sets[1].n_generators == 2


def test_forward_reach_rejects_bad_input():
    sys = LtiSystem(np.eye(2), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        forward_reach(sys, HPolytope.from_box([-1.0, -1.0], [1.0, 1.0]), 2)
    with pytest.raises(DimensionError):
        forward_reach(sys, UNIT_INPUT, 0)


def test_forward_fits_contain_reachable_states(small_problem, rng):
    sys = small_problem.sys
    sets = forward_reach(sys, small_problem.U, 4)
    fits = fit_forward(sets)
    for Z, E in zip(sets, fits.ellipsoids):
        assert np.all(E.membership(Z.vertices()) <= 1.0 + 1e-7)
    # simulate random admissible input sequences from the origin
    for _ in range(50):
        U = rng.uniform(-1.0, 1.0, size=4)
        states = sys.simulate(np.zeros(2), U)
        for x, E in zip(states, fits.ellipsoids):
            assert E.contains(x, 1e-7)


def test_backward_reach_without_input_is_the_terminal_set():
    sys = LtiSystem(np.eye(2), np.zeros((2, 1)))
    X_N = HPolytope.from_box([-1.0, -2.0], [1.0, 2.0])
    sets = backward_reach(sys, UNIT_INPUT, X_N, 4)
    assert len(sets) == 4
    for H in sets:
        assert {tuple(np.round(v, 8)) for v in H.vertices()} == {
            tuple(np.round(v, 8)) for v in X_N.vertices()
        }


def test_backward_sets_grow_towards_the_start(small_problem):
    sets = backward_reach(small_problem.sys, small_problem.U, small_problem.X[-1], small_problem.N)
    assert len(sets) == small_problem.N
    # X_N is invariant under an admissible law, so each earlier set contains the later one
    for earlier, later in zip(sets[:-1], sets[1:]):
        assert np.all(earlier.contains(later.vertices(), 1e-7))


def test_offline_artifacts(small_problem, small_offline):
    N = small_problem.N
    assert small_offline.N == N
    assert len(small_offline.forward) == N
    assert len(small_offline.backward) == N - 1
    assert len(small_offline.forward_norms) == N - 1
    assert all(len(nrm) == small_problem.X[0].n_rows for nrm in small_offline.backward_norms)
    assert small_offline.has_delta and small_offline.delta_bound == pytest.approx(0.3)
    assert small_offline.checksum == small_problem.checksum()


def test_backward_fits(small_offline):
    bw = small_offline.backward
    for H, inner, outer in zip(bw.polytopes, bw.inner, bw.outer):
        assert row_certificate(H, inner)
        assert np.all(outer.membership(H.vertices()) <= 1.0 + 1e-7)
        assert inner.log_volume() <= outer.log_volume()


def test_delta_fits_are_smaller(small_offline):
    for E, E_delta in zip(small_offline.forward.ellipsoids, small_offline.forward_delta.ellipsoids):
        assert E_delta.log_volume() < E.log_volume()


def test_horizon_one_has_no_backward_fits():
    problem = build_double_integrator(n_v=8, N=1)
    offline = compute_offline(problem)
    assert offline.backward is None
    assert len(offline.forward) == 1
    assert not offline.has_delta


def test_nonpositive_delta_bound(small_problem):
    with pytest.raises(GeometryError):
        compute_offline(small_problem, delta_bound=0.0)


def test_ensure_matches(small_problem, small_offline):
    assert ensure_matches(small_problem, small_offline) is small_offline
    other = build_double_integrator(n_v=10, N=small_problem.N)
    with pytest.raises(ArtifactMismatchError):
        ensure_matches(other, small_offline)
