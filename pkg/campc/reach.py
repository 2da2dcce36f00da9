"""Offline stage: forward and backward reachable sets and their ellipsoid fits."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from campc.errors import ArtifactMismatchError, DimensionError, GeometryError
from campc.geometry import (
    HPolytope,
    VertexSet,
    Zonotope,
    fourier_motzkin_eliminate,
    inscribed_ellipsoid,
    mvee,
)

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
CONTAINMENT_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class ForwardReachOffline:
    """Outer fits of the zero-state forward reachable sets, steps 1..N."""

    ellipsoids: tuple
    sets: tuple = ()

    def __len__(self):
        return len(self.ellipsoids)


@dataclass(frozen=True, eq=False)
class BackwardReachOffline:
    """Fits of the backward reachable sets, steps 1..N-1.

    ``outer`` contains the exact polytope and is the one used for removal;
    ``inner`` is contained in it row by row.
    """

    inner: tuple
    outer: tuple
    polytopes: tuple = ()

    def __len__(self):
        return len(self.outer)


@dataclass(frozen=True, eq=False)
class OfflineArtifacts:
    N: int
    forward: ForwardReachOffline
    backward: BackwardReachOffline | None
    forward_norms: tuple
    backward_norms: tuple
    checksum: str
    delta_bound: float | None = None
    forward_delta: ForwardReachOffline | None = None
    delta_norms: tuple = ()
    version: int = ARTIFACT_VERSION

    @property
    def has_delta(self):
        return self.forward_delta is not None


def input_set_carrier(U):
    """Zonotope for box (or scalar) input sets, otherwise the vertex hull."""
    if isinstance(U, (Zonotope, VertexSet)):
        return U
    C, b = U.C, U.b
    if U.dim == 1 or _is_box(C):
        lo, hi = U.bounding_box()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise GeometryError("input set must be bounded")
        return Zonotope.from_box(lo, hi)
    if U.dim > 3:
        raise GeometryError(
            f"input set of dim {U.dim} is not a box; supply an outer box or a Zonotope instead"
        )
    return VertexSet.from_polytope(U)


def _is_box(C):
    return bool(np.all(np.count_nonzero(np.abs(C) > 0, axis=1) == 1))


def forward_reach(sys, U, N):
    """Zero-state forward reachable sets H_1..H_N under inputs in U."""
    if N < 1:
        raise DimensionError(f"horizon must be >= 1, got {N}")
    carrier = input_set_carrier(U)
    if carrier.dim != sys.m:
        raise DimensionError(f"input set has dim {carrier.dim}, system has {sys.m} inputs")
    step_input = carrier.linear_map(sys.B)
    sets = [step_input]
    for _ in range(1, N):
        sets.append(sets[-1].linear_map(sys.A).minkowski_sum(step_input))
    return sets


def fit_forward(sets, tol=CONTAINMENT_TOL):
    ellipsoids = []
    for i, Z in enumerate(sets, start=1):
        V = Z.vertices()
        E = mvee(V)
        if not np.all(E.membership(V) <= 1.0 + tol):
            raise GeometryError(f"forward fit at step {i} does not contain its vertices")
        if E.regularized:
            logger.info("forward set at step %d is degenerate; fit is eps-inflated", i)
        ellipsoids.append(E)
    return ForwardReachOffline(tuple(ellipsoids), tuple(sets))


def backward_reach(sys, U, X_N, N):
    """Backward reachable polytopes H_1..H_N with H_N = X_N."""
    n, m = sys.n, sys.m
    if U.dim != m or X_N.dim != n:
        raise DimensionError("input or terminal set dimension does not match the system")
    H = X_N
    out = [X_N]
    input_rows = HPolytope(np.hstack([np.zeros((U.n_rows, n)), U.C]), U.b)
    for i in range(N, 1, -1):
        lifted = HPolytope(np.hstack([H.C @ sys.A, H.C @ sys.B]), H.b).intersect(input_rows)
        for k in reversed(range(m)):
            lifted = fourier_motzkin_eliminate(lifted, n + k)
        if lifted.is_empty():
            raise GeometryError(f"backward reachable set at step {i - 1} is empty")
        logger.info("backward set at step %d: %d rows", i - 1, lifted.n_rows)
        H = lifted
        out.insert(0, H)
    return out


def fit_backward(polytopes):
    inner, outer = [], []
    for i, H in enumerate(polytopes, start=1):
        try:
            E_in = inscribed_ellipsoid(H)
            E_out = mvee(H.vertices())
        except GeometryError as e:
            raise GeometryError(f"backward fit at step {i}: {e}") from e
        if not row_certificate(H, E_in):
            raise GeometryError(f"inner backward fit at step {i} fails its row certificate")
        inner.append(E_in)
        outer.append(E_out)
    return BackwardReachOffline(tuple(inner), tuple(outer), tuple(polytopes))


def row_certificate(poly, E):
    """||c_j L^-1|| <= b_j - c_j q for every row."""
    if poly.n_rows == 0:
        return True
    return bool(np.all(np.linalg.norm(poly.C @ E.L_inv, axis=1) <= poly.b - poly.C @ E.q))


def _row_norms(problem, fits):
    return tuple(
        np.linalg.norm(problem.X[i - 1].C @ fits[i - 1].L_inv, axis=1) for i in range(1, problem.N)
    )


def compute_offline(problem, delta_bound=None):
    """Everything the online loop needs that does not depend on the state."""
    sys, N = problem.sys, problem.N
    forward = fit_forward(forward_reach(sys, problem.U, N))
    backward = None
    backward_norms = ()
    if N > 1:
        backward = fit_backward(backward_reach(sys, problem.U, problem.X[-1], N)[:-1])
        backward_norms = _row_norms(problem, backward.outer)
    forward_delta = None
    delta_norms = ()
    if delta_bound is not None:
        if delta_bound <= 0:
            raise GeometryError(f"delta bound must be positive, got {delta_bound}")
        forward_delta = fit_forward(forward_reach(sys, delta_input_set(sys.m, delta_bound), N))
        delta_norms = _row_norms(problem, forward_delta.ellipsoids)
    return OfflineArtifacts(
        N=N,
        forward=forward,
        backward=backward,
        forward_norms=_row_norms(problem, forward.ellipsoids),
        backward_norms=backward_norms,
        checksum=problem.checksum(),
        delta_bound=None if delta_bound is None else float(delta_bound),
        forward_delta=forward_delta,
        delta_norms=delta_norms,
    )


def ensure_matches(problem, offline):
    if offline.checksum != problem.checksum() or offline.N != problem.N:
        raise ArtifactMismatchError("offline artifact does not match the problem; re-run the offline stage")
    return offline


def delta_input_set(m, bound):
    return HPolytope.from_box(-bound * np.ones(m), bound * np.ones(m))

