"""Online stage: per-step removal sets, index sets and the reduced QP.

Three ellipsoids bound where the optimal predicted state x*_i can be at step i:
the shifted forward reachable set, the backward reachable set of the terminal
set, and the image of the first-order optimality ellipsoid. A state row is
dropped when one of them lies entirely inside its halfspace.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from campc.errors import CampcError, ConfigError, ExactnessViolation, InfeasibleError
from campc.geometry import EPS_INFLATE, Ellipsoid, affine_image_ellipsoid, covered_rows
from campc.model import input_sequence_feasible
from campc.qp import QpSolution, assemble_reduced_qp, solve_qp
from campc.reach import delta_input_set

logger = logging.getLogger(__name__)

MODES = ("full", "exact", "approx")
SOURCES = ("fwd", "bwd", "opt")
MEMBERSHIP_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class IndexSets:
    """Per step i = 1..N: retained (A_i), removed (I_i) and fixed (F_i) row indices."""

    retained: tuple
    removed: tuple
    fixed: tuple
    counts: np.ndarray

    @classmethod
    def full(cls, problem):
        empty = np.zeros(0, dtype=int)
        retained = tuple(np.arange(k) for k in problem.row_counts)
        fixed = tuple(empty for _ in range(problem.N - 1)) + (retained[-1],)
        return cls(retained, tuple(empty for _ in range(problem.N)), fixed, np.zeros((problem.N, 3), dtype=int))

    @property
    def n_retained(self):
        return int(sum(len(a) for a in self.retained))

    @property
    def n_removed(self):
        return int(sum(len(r) for r in self.removed))


@dataclass(frozen=True)
class RemovalReport:
    retained: tuple
    removed_fwd: tuple
    removed_bwd: tuple
    removed_opt: tuple
    totals: tuple

    @classmethod
    def from_index_sets(cls, idx, problem):
        return cls(
            retained=tuple(len(a) for a in idx.retained),
            removed_fwd=tuple(int(c) for c in idx.counts[:, 0]),
            removed_bwd=tuple(int(c) for c in idx.counts[:, 1]),
            removed_opt=tuple(int(c) for c in idx.counts[:, 2]),
            totals=problem.row_counts,
        )

    @property
    def total_retained(self):
        return sum(self.retained)

    @property
    def total_constraints(self):
        return sum(self.totals)

    @property
    def percent_retained(self):
        return 100.0 * self.total_retained / max(1, self.total_constraints)

    def removed_by_source(self):
        return {"fwd": sum(self.removed_fwd), "bwd": sum(self.removed_bwd), "opt": sum(self.removed_opt)}


@dataclass(frozen=True, eq=False)
class StepSets:
    """The removal ellipsoids of one prediction step; None marks a disabled source."""

    fwd: Ellipsoid | None = None
    bwd: Ellipsoid | None = None
    opt: Ellipsoid | None = None

    def sources(self):
        return (self.fwd, self.bwd, self.opt)


@dataclass(frozen=True, eq=False)
class StepResult:
    u: np.ndarray
    solution: QpSolution
    report: RemovalReport
    index_sets: IndexSets
    sets: tuple
    U_tilde: np.ndarray | None
    t_index: float
    t_qp: float
    mode: str
    used_fallback: bool = False

    @property
    def solve_time(self):
        return self.t_index + self.t_qp


@dataclass(frozen=True, eq=False)
class OptimalityEllipsoid(Ellipsoid):
    """{U : ||G (U - q)|| <= radius} stored as E(G / radius, q)."""

    radius: float = 1.0


def first_order_ellipsoid(G, q, U_tilde):
    """Every minimizer over a convex set holding U_tilde lies in
    {U : ||G (U - c)|| <= rho}, c = (U_tilde + q)/2, rho = ||G (U_tilde - q)||/2.
    """
    U_tilde = np.asarray(U_tilde, dtype=float)
    center = 0.5 * (U_tilde + q)
    radius = 0.5 * float(np.linalg.norm(G @ (U_tilde - q)))
    floor = EPS_INFLATE * max(1.0, float(np.linalg.norm(G @ U_tilde)), float(np.linalg.norm(G @ q)))
    inflated = radius < floor
    if inflated:
        radius = floor
    return OptimalityEllipsoid(G / radius, center, inflated, radius)


def optimality_ellipsoid(problem, x, U_tilde):
    return first_order_ellipsoid(problem.G, problem.q(x), U_tilde)


def step_sets(problem, offline, x, J_ell, i, nominal=None):
    """M(1), M(2), M(3) at prediction step i.

    With ``nominal`` (approximate mode) the forward set is the delta-input
    reach centred on the nominal state instead of the shifted full reach.
    """
    Ai_x = problem.A_powers[i] @ x
    if nominal is None:
        fwd = offline.forward.ellipsoids[i - 1].translated(Ai_x)
    else:
        fwd = offline.forward_delta.ellipsoids[i - 1].translated(nominal[i - 1])
    bwd = offline.backward.outer[i - 1] if offline.backward is not None and i < problem.N else None
    opt = affine_image_ellipsoid(problem.Gamma_block(i), Ai_x, J_ell) if J_ell is not None else None
    return StepSets(fwd, bwd, opt)


def remove_for_step(X_i, fixed, ellipsoids, norms=None):
    """Indices removed at one step and how many each source removed first."""
    n_rows = X_i.n_rows
    candidate = np.ones(n_rows, dtype=bool)
    candidate[np.asarray(fixed, dtype=int)] = False
    removed = np.zeros(n_rows, dtype=bool)
    counts = np.zeros(len(ellipsoids), dtype=int)
    for l, E in enumerate(ellipsoids):
        if E is None:
            continue
        pre = None if norms is None else norms[l]
        hit = covered_rows(X_i.C, X_i.b, E, pre) & candidate & ~removed
        counts[l] = int(hit.sum())
        removed |= hit
    return np.flatnonzero(removed), counts


def compute_index_sets(problem, offline, x, J_ell=None, nominal=None):
    """Index sets and removal ellipsoids for every step; terminal rows are fixed."""
    N = problem.N
    retained, removed, fixed, sets = [], [], [], []
    counts = np.zeros((N, 3), dtype=int)
    empty = np.zeros(0, dtype=int)
    for i in range(1, N):
        S = step_sets(problem, offline, x, J_ell, i, nominal)
        fwd_norms = offline.forward_norms[i - 1] if nominal is None else offline.delta_norms[i - 1]
        bwd_norms = offline.backward_norms[i - 1] if S.bwd is not None else None
        opt_norms = None if J_ell is None else J_ell.radius * problem.opt_direction_norms[i - 1]
        I_i, c = remove_for_step(problem.X[i - 1], empty, S.sources(), (fwd_norms, bwd_norms, opt_norms))
        keep = np.ones(problem.X[i - 1].n_rows, dtype=bool)
        keep[I_i] = False
        retained.append(np.flatnonzero(keep))
        removed.append(I_i)
        fixed.append(empty)
        counts[i - 1] = c
        sets.append(S)
    terminal = np.arange(problem.X[-1].n_rows)
    retained.append(terminal)
    removed.append(empty)
    fixed.append(terminal)
    return IndexSets(tuple(retained), tuple(removed), tuple(fixed), counts), tuple(sets)


def warm_start(problem, prev_U, prev_terminal_state, K_T):
    """Shift the previous solution and append the terminal law's input.

    Returns None when there is no previous solution (cold start).
    """
    if prev_U is None:
        return None
    prev_U = np.asarray(prev_U, dtype=float)
    tail = np.atleast_2d(K_T) @ np.asarray(prev_terminal_state, dtype=float)
    return np.concatenate([prev_U[problem.m :], tail.reshape(-1)])


def delta_rows(problem, U_tilde, deltaU):
    """Rows for u_i - u~_i in deltaU, i = 0..N-1, in U-space."""
    N, m = problem.N, problem.m
    M = np.kron(np.eye(N), deltaU.C)
    d = np.tile(deltaU.b, N) + M @ np.asarray(U_tilde, dtype=float)
    tags = tuple(("delta", i, j) for i in range(N) for j in range(deltaU.n_rows))
    return M, d, tags


def check_conditions(problem, x, sets, U_star, tol=MEMBERSHIP_TOL):
    """(C1, C2) on a realized minimizer.

    C1: every predicted state lies in every removal ellipsoid of its step.
    C2: every predicted state satisfies all rows of its step.
    """
    states = problem.predict(x, U_star)
    c1 = all(
        E.contains(states[i], tol)
        for i, S in enumerate(sets)
        for E in S.sources()
        if E is not None
    )
    c2 = all(bool(Xi.contains(states[i], tol)) for i, Xi in enumerate(problem.X))
    return bool(c1), bool(c2)


def _settle(problem, x, idx, sol, warm, strict, extra=None):
    """Accept an optimal reduced solution, otherwise classify with the full QP."""
    if sol.optimal:
        return idx, sol, False
    if sol.status != "infeasible":
        raise CampcError(f"reduced QP ended with status {sol.status}: {sol.message}")
    full_idx = IndexSets.full(problem)
    full = solve_qp(assemble_reduced_qp(problem, x, full_idx, extra), warm_start=warm)
    if full.status == "infeasible":
        raise InfeasibleError(f"state {np.array2string(np.asarray(x), precision=6)} is infeasible")
    if not full.optimal:
        raise CampcError(f"full QP ended with status {full.status}: {full.message}")
    if strict:
        raise ExactnessViolation("reduced QP is infeasible while the full QP is feasible")
    logger.warning("reduced QP infeasible while the full QP is feasible; using the full solution")
    return full_idx, full, True


def _result(problem, idx, sol, sets, U_tilde, t_index, t_qp, mode, fallback=False):
    return StepResult(
        u=sol.U_star[: problem.m].copy(),
        solution=sol,
        report=RemovalReport.from_index_sets(idx, problem),
        index_sets=idx,
        sets=sets,
        U_tilde=U_tilde,
        t_index=t_index,
        t_qp=t_qp,
        mode=mode,
        used_fallback=fallback,
    )


def full_step(problem, x, warm=None):
    """Original MPC: every state row kept."""
    x = np.asarray(x, dtype=float)
    t0 = time.perf_counter()
    idx = IndexSets.full(problem)
    sol = solve_qp(assemble_reduced_qp(problem, x, idx), warm_start=warm)
    t1 = time.perf_counter()
    if sol.status == "infeasible":
        raise InfeasibleError(f"state {np.array2string(x, precision=6)} is infeasible")
    if not sol.optimal:
        raise CampcError(f"full QP ended with status {sol.status}: {sol.message}")
    return _result(problem, idx, sol, (), warm, 0.0, t1 - t0, "full")


def solve_reduced(problem, offline, x, warm=None, extra=None, nominal=None):
    """Index sets, removal sets and the raw reduced-QP solution, no fallback."""
    J_ell = optimality_ellipsoid(problem, x, warm) if warm is not None else None
    idx, sets = compute_index_sets(problem, offline, x, J_ell, nominal)
    sol = solve_qp(assemble_reduced_qp(problem, x, idx, extra), warm_start=warm)
    return idx, sets, sol


def exact_step(problem, offline, x, warm=None, strict=False):
    """One exact ca-MPC step; without a usable warm start the optimality set is off."""
    x = np.asarray(x, dtype=float)
    t0 = time.perf_counter()
    J_ell = None
    if warm is not None:
        if input_sequence_feasible(problem, x, warm):
            J_ell = optimality_ellipsoid(problem, x, warm)
        else:
            logger.warning("shifted warm start is infeasible here; optimality set disabled for this step")
            warm = None
    idx, sets = compute_index_sets(problem, offline, x, J_ell)
    t1 = time.perf_counter()
    sol = solve_qp(assemble_reduced_qp(problem, x, idx), warm_start=warm)
    t2 = time.perf_counter()
    idx, sol, fallback = _settle(problem, x, idx, sol, warm, strict)
    return _result(problem, idx, sol, sets, warm, t1 - t0, t2 - t1, "exact", fallback)


def approx_step(problem, offline, x, U_tilde, deltaU, strict=False):
    """One step of the problem augmented with U in U_tilde + deltaU^N."""
    if not offline.has_delta:
        raise ConfigError("offline artifacts carry no delta-input forward fits")
    lo, hi = deltaU.bounding_box()
    if np.any(hi > offline.delta_bound + 1e-12) or np.any(lo < -offline.delta_bound - 1e-12):
        raise ConfigError(f"deltaU exceeds the offline delta bound {offline.delta_bound}")
    x = np.asarray(x, dtype=float)
    U_tilde = np.asarray(U_tilde, dtype=float)
    t0 = time.perf_counter()
    if not input_sequence_feasible(problem, x, U_tilde):
        raise InfeasibleError("approximate step needs a feasible U_tilde")
    extra = delta_rows(problem, U_tilde, deltaU)
    J_ell = optimality_ellipsoid(problem, x, U_tilde)
    nominal = problem.predict(x, U_tilde)
    idx, sets = compute_index_sets(problem, offline, x, J_ell, nominal)
    t1 = time.perf_counter()
    sol = solve_qp(assemble_reduced_qp(problem, x, idx, extra), warm_start=U_tilde)
    t2 = time.perf_counter()
    idx, sol, fallback = _settle(problem, x, idx, sol, U_tilde, strict, extra)
    return _result(problem, idx, sol, sets, U_tilde, t1 - t0, t2 - t1, "approx", fallback)


class CaMpcController:
    """Receding-horizon controller; owns the previous solution for warm starts."""

    def __init__(self, problem, offline=None, mode="exact", delta_bound=None, strict=False):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
        if mode != "full" and offline is None:
            raise ConfigError(f"mode {mode!r} needs offline artifacts")
        if mode == "approx":
            if delta_bound is None:
                raise ConfigError("approximate mode needs a delta bound")
            if offline.delta_bound is None or delta_bound > offline.delta_bound + 1e-12:
                raise ConfigError(
                    f"offline artifacts were built for delta bound {offline.delta_bound}, not {delta_bound}"
                )
            if problem.terminal_law is None:
                raise ConfigError("approximate mode needs a terminal law for its warm start")
        self.problem = problem
        self.offline = offline
        self.mode = mode
        self.strict = strict
        self.deltaU = delta_input_set(problem.m, delta_bound) if mode == "approx" else None
        self._previous = None

    def reset(self):
        self._previous = None

    def shifted_warm_start(self):
        if self._previous is None or self.problem.terminal_law is None:
            return None
        U_prev, x_prev = self._previous
        x_N = self.problem.predict(x_prev, U_prev)[-1]
        return warm_start(self.problem, U_prev, x_N, self.problem.terminal_law.K_T)

    def step(self, x):
        x = np.asarray(x, dtype=float)
        U_tilde = self.shifted_warm_start()
        if self.mode == "full":
            result = full_step(self.problem, x, U_tilde)
        elif self.mode == "exact" or U_tilde is None:
            result = exact_step(self.problem, self.offline, x, U_tilde, self.strict)
        elif input_sequence_feasible(self.problem, x, U_tilde):
            result = approx_step(self.problem, self.offline, x, U_tilde, self.deltaU, self.strict)
        else:
            logger.warning("warm start infeasible; approximate controller takes an exact step")
            result = exact_step(self.problem, self.offline, x, U_tilde, self.strict)
        self._previous = (result.solution.U_star.copy(), x.copy())
        return result
