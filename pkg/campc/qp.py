"""Dense strictly convex QP in condensed input space.

min ||G (U - q0)||^2  s.t.  M U <= d, solved with a primal active-set method.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr, solve_triangular

from campc.errors import DimensionError
from campc.geometry import ZERO_TOL, HPolytope, infeasibility_certificate, lp_solve

if TYPE_CHECKING:
    from campc.controller import IndexSets
    from campc.model import MpcProblem

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
STEP_TOL = 1e-12
DEPENDENCE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class QpSpec:
    G: np.ndarray
    q0: np.ndarray
    M: np.ndarray
    d: np.ndarray
    tags: tuple = ()

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        q0 = np.asarray(self.q0, dtype=float).reshape(-1)
        n = q0.shape[0]
        M = np.asarray(self.M, dtype=float).reshape(-1, n)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if G.shape != (n, n):
            raise DimensionError(f"G has shape {G.shape}, expected {(n, n)}")
        if M.shape[0] != d.shape[0]:
            raise DimensionError(f"{M.shape[0]} constraint rows but {d.shape[0]} offsets")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(d))):
            raise DimensionError("constraint rows must be finite")
        if np.linalg.cond(G) > 1.0 / np.finfo(float).eps:
            raise DimensionError("objective factor G is singular")
        if self.tags and (len(self.tags) != M.shape[0] or len(set(self.tags)) != len(self.tags)):
            raise DimensionError("provenance tags must be unique, one per row")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def n_vars(self):
        return self.q0.shape[0]

    @property
    def n_rows(self):
        return self.M.shape[0]

    @cached_property
    def H(self):
        return self.G.T @ self.G

    def objective(self, U):
        r = self.G @ (np.asarray(U, dtype=float) - self.q0)
        return float(r @ r)

    def gradient(self, U):
        return 2.0 * self.H @ (np.asarray(U, dtype=float) - self.q0)

    def with_rows(self, M, d, tags=()):
        """Same objective, extra rows appended."""
        return QpSpec(
            self.G, self.q0, np.vstack([self.M, M]), np.concatenate([self.d, d]),
            self.tags + tuple(tags) if self.tags else (),
        )


@dataclass(frozen=True, eq=False)
class QpSolution:
    status: str
    U_star: np.ndarray
    active_set: tuple
    multipliers: np.ndarray
    iterations: int
    solve_time: float
    value: float = np.nan
    message: str = ""
    certificate: tuple = ()

    @property
    def optimal(self):
        return self.status == "optimal"


def _solution(status, U, active, mult, iters, t0, spec, message="", certificate=()):
    value = spec.objective(U) if U is not None and np.all(np.isfinite(U)) else np.nan
    if U is None:
        U = np.full(spec.n_vars, np.nan)
    return QpSolution(
        status, U, tuple(int(j) for j in active), mult, iters,
        time.perf_counter() - t0, value, message, tuple(int(j) for j in certificate),
    )


def _subspace_step(H2, g, A_W):
    """Null-space solve of min p'H2 p / 2 + g'p s.t. A_W p = 0; returns (p, multipliers)."""
    n = g.shape[0]
    k = A_W.shape[0]
    if k == 0:
        return -cho_solve(cho_factor(H2), g), np.zeros(0)
    Q, R = qr(A_W.T)
    Y, Z = Q[:, :k], Q[:, k:]
    if Z.shape[1]:
        p = -Z @ cho_solve(cho_factor(Z.T @ H2 @ Z), Z.T @ g)
    else:
        p = np.zeros(n)
    lam = solve_triangular(R[:k], -Y.T @ (g + H2 @ p))
    return p, lam


def solve_qp(spec, warm_start=None, tol=FEAS_TOL, max_iter=None):
    """Primal active-set solve.

    Blocking ties go to the smallest index. Once a working set repeats, rows
    are also dropped by smallest index instead of most negative multiplier.
    """
    t0 = time.perf_counter()
    n, r = spec.n_vars, spec.n_rows
    q0 = spec.q0
    mult = np.zeros(r)

    norms = np.linalg.norm(spec.M, axis=1) if r else np.zeros(0)
    flat = norms <= ZERO_TOL
    if np.any(spec.d[flat] < -tol):
        bad = np.flatnonzero(flat & (spec.d < -tol))
        return _solution("infeasible", None, (), mult, 0, t0, spec, "zero row with negative offset", bad[:1])
    safe = np.where(flat, 1.0, norms)
    Ms = spec.M / safe[:, None]
    ds = np.where(flat, np.inf, spec.d / safe)

    if r == 0 or np.all(Ms @ q0 <= ds + tol):
        return _solution("optimal", q0.copy(), (), mult, 0, t0, spec)

    U = None
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float).reshape(-1)
        if w.shape[0] == n and np.all(np.isfinite(w)) and np.all(Ms @ w <= ds + tol):
            U = w.copy()
        else:
            logger.debug("warm start rejected; running phase one")
    if U is None:
        live = np.flatnonzero(~flat)
        region = HPolytope(Ms[live], ds[live])
        res = lp_solve(np.zeros(n), region)
        if res.status == "infeasible":
            cert = [live[j] for j in infeasibility_certificate(region)]
            return _solution("infeasible", None, (), mult, 0, t0, spec, "phase one infeasible", cert)
        if res.status != "optimal":
            return _solution("error", None, (), mult, 0, t0, spec, f"phase one: {res.message}")
        U = res.x_opt

    H2 = 2.0 * spec.H
    max_iter = max_iter or 10 * (n + r) + 100
    W: list[int] = []
    in_W = np.zeros(r, dtype=bool)
    seen = set()
    bland = False
    at_minimizer = False
    for it in range(1, max_iter + 1):
        g = H2 @ (U - q0)
        p, lam = _subspace_step(H2, g, Ms[W])
        p_norm = np.linalg.norm(p, np.inf)
        if at_minimizer or p_norm <= STEP_TOL * max(1.0, np.linalg.norm(U, np.inf)):
            gscale = max(1.0, np.linalg.norm(g, np.inf))
            negative = np.flatnonzero(lam < -tol * gscale)
            if negative.size == 0:
                mult[W] = np.maximum(lam, 0.0) / safe[W]
                return _solution("optimal", U, sorted(W), mult, it, t0, spec)
            key = frozenset(W)
            if key in seen and not bland:
                logger.debug("working set repeated at iteration %d; switching to smallest-index drops", it)
                bland = True
            seen.add(key)
            if bland:
                drop = min(W[k] for k in negative)
            else:
                drop = W[int(np.argmin(lam))]
            W.remove(drop)
            in_W[drop] = False
            at_minimizer = False
            continue
        Mp = Ms @ p
        # rows nearly dependent on the working set cannot block
        candidates = (Mp > DEPENDENCE_TOL * p_norm) & ~in_W
        if np.any(candidates):
            ratios = np.full(r, np.inf)
            ratios[candidates] = np.maximum(ds[candidates] - Ms[candidates] @ U, 0.0) / Mp[candidates]
            lowest = ratios.min()
            j = int(np.flatnonzero(ratios <= lowest + 1e-12 * max(1.0, lowest))[0])
            alpha = min(1.0, lowest)
        else:
            j, alpha = -1, 1.0
        U = U + alpha * p
        if j >= 0 and alpha < 1.0:
            W.append(j)
            in_W[j] = True
        else:
            at_minimizer = True
    logger.warning("active-set solver hit its iteration cap (%d)", max_iter)
    return _solution("max_iter", U, sorted(W), mult, max_iter, t0, spec, "iteration cap reached")


def kkt_verify(spec, sol, tol=1e-8):
    """Independent KKT check on row-normalized data."""
    if not sol.optimal:
        return False
    U = np.asarray(sol.U_star, dtype=float)
    g = spec.gradient(U)
    scale = max(1.0, np.linalg.norm(g, np.inf))
    if spec.n_rows == 0:
        return bool(np.linalg.norm(g, np.inf) <= tol * scale)
    norms = np.linalg.norm(spec.M, axis=1)
    norms[norms <= ZERO_TOL] = 1.0
    Mh = spec.M / norms[:, None]
    dh = spec.d / norms
    lh = np.asarray(sol.multipliers, dtype=float) * norms
    residual = Mh @ U - dh
    stationary = np.linalg.norm(g + Mh.T @ lh, np.inf) <= tol * scale
    dual = np.all(lh >= -tol * scale)
    primal = np.all(residual <= tol)
    complementary = np.all(np.abs(lh * residual) <= tol * scale)
    return bool(stationary and dual and primal and complementary)


def assemble_reduced_qp(problem: MpcProblem, x, idx: IndexSets, extra_input_rows=None):
    """Retained state rows c_ij (Phi_i x + Gamma_i U) <= b_ij plus all input rows."""
    x = np.asarray(x, dtype=float)
    blocks_M, blocks_d, tags = [], [], []
    for i, (CG, CP, b) in enumerate(problem.state_maps, start=1):
        rows = idx.retained[i - 1]
        blocks_M.append(CG[rows])
        blocks_d.append(b[rows] - CP[rows] @ x)
        tags.extend(("state", i, int(j)) for j in rows)
    M_in, d_in, tags_in = problem.input_rows
    blocks_M.append(M_in)
    blocks_d.append(d_in)
    tags.extend(tags_in)
    if extra_input_rows is not None:
        M_e, d_e, tags_e = extra_input_rows
        blocks_M.append(M_e)
        blocks_d.append(d_e)
        tags.extend(tags_e)
    return QpSpec(problem.G, problem.q(x), np.vstack(blocks_M), np.concatenate(blocks_d), tuple(tags))
