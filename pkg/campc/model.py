"""LTI dynamics, MPC problem data and condensing."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_solve, cholesky, solve_triangular

from campc.errors import ConvergenceError, DimensionError, GeometryError, WeightError
from campc.geometry import ZERO_TOL, HPolytope, lp_solve, remove_redundant_rows

logger = logging.getLogger(__name__)

# double integrator data
SAMPLE_TIME = 0.1
DOUBLE_INTEGRATOR_OFFSET = (2.15, 0.0)
ELLIPSE_P1 = ((0.14, 0.17), (0.17, 0.97))
ELLIPSE_P2 = ((0.20, 0.05), (0.05, 0.21))
TERMINAL_GAIN = (-0.01, -0.01)
TERMINAL_MAX_ITERS = 60


@dataclass(frozen=True, eq=False)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        B = np.array(self.B, dtype=float)
        B = B.reshape(A.shape[0], -1) if B.ndim < 2 else B
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise DimensionError("system matrices must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def step(self, x, u):
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.atleast_1d(np.asarray(u, dtype=float))

    def simulate(self, x0, U):
        """States x_1..x_N for the stacked input sequence U."""
        U = np.asarray(U, dtype=float).reshape(-1, self.m)
        x = np.asarray(x0, dtype=float)
        out = np.empty((U.shape[0], self.n))
        for i, u in enumerate(U):
            x = self.A @ x + self.B @ u
            out[i] = x
        return out

    def closed_loop(self, K):
        return self.A + self.B @ np.atleast_2d(K)


def _symmetric(M, name):
    M = np.atleast_2d(np.array(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise WeightError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise WeightError(f"{name} must be symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Stage cost x'Qx + u'Ru, terminal cost x'Px."""

    Q: np.ndarray
    P: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q, P, R = _symmetric(self.Q, "Q"), _symmetric(self.P, "P"), _symmetric(self.R, "R")
        if Q.shape != P.shape:
            raise WeightError(f"Q {Q.shape} and P {P.shape} differ in shape")
        for name, M in (("Q", Q), ("P", P)):
            lowest = np.linalg.eigvalsh(M).min()
            if lowest < -1e-12 * max(1.0, np.abs(M).max()):
                raise WeightError(f"{name} must be positive semidefinite (smallest eigenvalue {lowest:.3e})")
        lowest = np.linalg.eigvalsh(R).min()
        if lowest <= 0:
            raise WeightError(f"R must be positive definite (smallest eigenvalue {lowest:.3e})")
        for name, M in (("Q", Q), ("P", P), ("R", R)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)


@dataclass(frozen=True, eq=False)
class TerminalLaw:
    K_T: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.array(self.K_T, dtype=float))
        K.setflags(write=False)
        object.__setattr__(self, "K_T", K)

    def __call__(self, x):
        return self.K_T @ np.asarray(x, dtype=float)


def build_prediction(sys, N):
    """Phi, Gamma with [x_1; ...; x_N] = Phi x + Gamma U."""
    if N < 1:
        raise DimensionError(f"horizon must be >= 1, got {N}")
    n, m = sys.n, sys.m
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(sys.A @ powers[-1])
    Phi = np.zeros((N * n, n))
    Gamma = np.zeros((N * n, N * m))
    for i in range(1, N + 1):
        rows = slice((i - 1) * n, i * n)
        Phi[rows] = powers[i]
        for j in range(i):
            Gamma[rows, j * m : (j + 1) * m] = powers[i - 1 - j] @ sys.B
    return Phi, Gamma


def condense_cost(sys, weights, Phi, Gamma):
    """(G, Kq) with J(x, U) = ||G (U - Kq x)||^2 + r(x); r is never formed."""
    n = sys.n
    N = Phi.shape[0] // n
    Qbar = block_diag(*([weights.Q] * (N - 1) + [weights.P]))
    Rbar = block_diag(*([weights.R] * N))
    H = Gamma.T @ Qbar @ Gamma + Rbar
    H = 0.5 * (H + H.T)
    try:
        G = cholesky(H, lower=False)
    except LinAlgError as e:
        raise WeightError("Gamma' Qbar Gamma + Rbar is not positive definite; R must be positive definite") from e
    Kq = -cho_solve((G, False), Gamma.T @ Qbar @ Phi)
    return G, Kq


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Condensed MPC problem: min ||G (U - Kq x)||^2 s.t. x_i in X[i-1], u_i in U."""

    sys: LtiSystem
    N: int
    X: tuple
    U: HPolytope
    weights: CostWeights
    Phi: np.ndarray
    Gamma: np.ndarray
    G: np.ndarray
    Kq: np.ndarray
    terminal_law: TerminalLaw | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.X) != self.N:
            raise DimensionError(f"need {self.N} step constraint sets, got {len(self.X)}")
        for i, Xi in enumerate(self.X, start=1):
            if Xi.dim != self.sys.n:
                raise DimensionError(f"X_{i} has dim {Xi.dim}, state has dim {self.sys.n}")
        if self.U.dim != self.sys.m:
            raise DimensionError(f"U has dim {self.U.dim}, input has dim {self.sys.m}")
        object.__setattr__(self, "X", tuple(self.X))

    @classmethod
    def build(cls, sys, N, X, U, weights, terminal_law=None, meta=None):
        Phi, Gamma = build_prediction(sys, N)
        G, Kq = condense_cost(sys, weights, Phi, Gamma)
        return cls(sys, N, tuple(X), U, weights, Phi, Gamma, G, Kq, terminal_law, dict(meta or {}))

    @property
    def n(self):
        return self.sys.n

    @property
    def m(self):
        return self.sys.m

    @property
    def n_inputs(self):
        return self.N * self.sys.m

    @property
    def row_counts(self):
        return tuple(Xi.n_rows for Xi in self.X)

    @property
    def total_state_constraints(self):
        return sum(self.row_counts)

    def q(self, x):
        return self.Kq @ np.asarray(x, dtype=float)

    @cached_property
    def H(self):
        return self.G.T @ self.G

    @cached_property
    def A_powers(self):
        powers = [np.eye(self.n)]
        for _ in range(self.N):
            powers.append(self.sys.A @ powers[-1])
        return tuple(powers)

    def Gamma_block(self, i):
        return self.Gamma[(i - 1) * self.n : i * self.n]

    def Phi_block(self, i):
        return self.Phi[(i - 1) * self.n : i * self.n]

    def predict(self, x, U):
        """Predicted states x_1..x_N as an (N, n) array."""
        X = self.Phi @ np.asarray(x, dtype=float) + self.Gamma @ np.asarray(U, dtype=float)
        return X.reshape(self.N, self.n)

    def cost(self, x, U):
        r = np.asarray(U, dtype=float) - self.q(x)
        return float(r @ self.H @ r)

    @cached_property
    def state_maps(self):
        """Per step i: (C_i Gamma_i, C_i Phi_i, b_i)."""
        return tuple(
            (Xi.C @ self.Gamma_block(i), Xi.C @ self.Phi_block(i), Xi.b)
            for i, Xi in enumerate(self.X, start=1)
        )

    @cached_property
    def input_rows(self):
        """(M, d, tags) for u_i in U, i = 0..N-1."""
        m, N = self.m, self.N
        M = block_diag(*([self.U.C] * N)) if self.U.n_rows else np.zeros((0, N * m))
        d = np.tile(self.U.b, N)
        tags = tuple(("input", i, j) for i in range(N) for j in range(self.U.n_rows))
        return M, d, tags

    @cached_property
    def opt_direction_norms(self):
        """||c_{i,j} Gamma_i G^-1|| per step, the state-independent part of the optimality test."""
        out = []
        for CG, _, _ in self.state_maps:
            if CG.shape[0] == 0:
                out.append(np.zeros(0))
                continue
            W = solve_triangular(self.G, CG.T, trans="T", lower=False)
            out.append(np.linalg.norm(W, axis=0))
        return tuple(out)

    def full_constraints(self, x):
        """All state and input rows in U-space: (M, d)."""
        x = np.asarray(x, dtype=float)
        Ms = [CG for CG, _, _ in self.state_maps]
        ds = [b - CP @ x for _, CP, b in self.state_maps]
        M_in, d_in, _ = self.input_rows
        return np.vstack(Ms + [M_in]), np.concatenate(ds + [d_in])

    def checksum(self):
        h = hashlib.sha256()

        def feed(arr):
            arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())

        h.update(f"N={self.N}".encode())
        for arr in (self.sys.A, self.sys.B, self.weights.Q, self.weights.P, self.weights.R, self.U.C, self.U.b):
            feed(arr)
        for Xi in self.X:
            feed(Xi.C)
            feed(Xi.b)
        if self.terminal_law is not None:
            feed(self.terminal_law.K_T)
        return h.hexdigest()


def stage_cost_sum(problem, x, U):
    """sum_i x_i'Q x_i + u_i'R u_i + x_N'P x_N (the uncondensed cost)."""
    w = problem.weights
    x = np.asarray(x, dtype=float)
    U = np.asarray(U, dtype=float).reshape(problem.N, problem.m)
    states = np.vstack([x[None, :], problem.predict(x, U.reshape(-1))])
    total = sum(float(s @ w.Q @ s) for s in states[:-1])
    total += sum(float(u @ w.R @ u) for u in U)
    return total + float(states[-1] @ w.P @ states[-1])


def constraint_violation(problem, x, U):
    """Largest violation over every state and input row (<= 0 when feasible)."""
    M, d = problem.full_constraints(x)
    if M.shape[0] == 0:
        return 0.0
    norms = np.linalg.norm(M, axis=1)
    norms[norms == 0] = 1.0
    return float(np.max((M @ np.asarray(U, dtype=float) - d) / norms))


def input_sequence_feasible(problem, x, U, tol=1e-8):
    return constraint_violation(problem, x, U) <= tol


def is_feasible_state(problem, x):
    """Phase-one LP on the full problem: is there any admissible input sequence?"""
    M, d = problem.full_constraints(x)
    res = lp_solve(np.zeros(problem.n_inputs), HPolytope(M, d))
    return res.status in ("optimal", "unbounded")


def invariance_certificate(A_K, poly, tol=1e-9):
    """True if every row (c, b) of poly satisfies max c A_K x over poly <= b."""
    if poly.n_rows == 0:
        return True
    values = poly.support_values(poly.C @ A_K)
    return bool(np.all(values <= poly.b + tol * np.maximum(1.0, np.abs(poly.b))))


def build_terminal_set(sys, K_T, X1, max_iters=TERMINAL_MAX_ITERS, U=None):
    """Largest subset of X1 (and of {K_T x in U} if given) invariant under u = K_T x.

    Pass k intersects the iterate with its own pre-image under (A + B K_T)^(2^k),
    so after k passes the iterate holds every state whose first 2^k closed-loop
    successors stay in the seed. The loop stops at the first invariant iterate.
    """
    K = np.atleast_2d(np.asarray(K_T, dtype=float))
    A_K = sys.closed_loop(K)
    omega = X1
    if U is not None:
        omega = omega.intersect(HPolytope(U.C @ K, U.b))
    omega = remove_redundant_rows(omega)
    if omega.is_empty():
        raise GeometryError("terminal set seed is empty")
    power = A_K
    for it in range(max_iters):
        if invariance_certificate(A_K, omega):
            logger.info("terminal set converged after %d passes with %d rows", it, omega.n_rows)
            return omega
        if np.abs(power).max() <= ZERO_TOL:
            # every later successor is the origin, which the seed contains
            break
        omega = remove_redundant_rows(omega.intersect(omega.affine_preimage(power)))
        power = power @ power
        if omega.is_empty():
            raise GeometryError(f"terminal set became empty at pass {it + 1}")
        logger.debug("terminal set pass %d: %d rows", it + 1, omega.n_rows)
    if invariance_certificate(A_K, omega):
        return omega
    raise ConvergenceError(f"terminal set not invariant after {max_iters} passes")


def ellipse_tangent_rows(P, center, n_v):
    """Tangent halfplanes to (x - center)'P(x - center) <= 1 at n_v points equally spaced in angle.

    Returns (C, b, points) with C[j] . points[j] == b[j].
    """
    P = np.asarray(P, dtype=float)
    center = np.asarray(center, dtype=float)
    U = cholesky(P, lower=False)
    theta = 2.0 * np.pi * np.arange(n_v) / n_v
    W = np.column_stack([np.cos(theta), np.sin(theta)])
    offsets = solve_triangular(U, W.T, lower=False).T
    points = center + offsets
    C = offsets @ P
    b = 1.0 + C @ center
    return C, b, points


def build_double_integrator(n_v=330, N=12, K_T=TERMINAL_GAIN, d=DOUBLE_INTEGRATOR_OFFSET):
    """Double integrator with two tangent-polygon ellipse constraints.

    Both ellipses are centred at -d; the state set for steps 1..N-1 holds
    2 n_v rows and X_N is the invariant set of u = K_T x inside it.
    """
    if n_v < 3:
        raise DimensionError(f"n_v must be >= 3, got {n_v}")
    T = SAMPLE_TIME
    sys = LtiSystem(np.array([[1.0, T], [0.0, 1.0]]), np.array([[0.5 * T * T], [T]]))
    center = -np.asarray(d, dtype=float)
    C1, b1, _ = ellipse_tangent_rows(ELLIPSE_P1, center, n_v)
    C2, b2, _ = ellipse_tangent_rows(ELLIPSE_P2, center, n_v)
    X1 = HPolytope(np.vstack([C1, C2]), np.concatenate([b1, b2]))
    U = HPolytope(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
    law = TerminalLaw(K_T)
    XN = build_terminal_set(sys, law.K_T, X1, U=U)
    weights = CostWeights(np.eye(2), np.eye(2), np.eye(1))
    meta = {"name": "double_integrator", "n_v": int(n_v), "N": int(N)}
    logger.info("double integrator: n_v=%d N=%d terminal rows=%d", n_v, N, XN.n_rows)
    return MpcProblem.build(sys, N, [X1] * (N - 1) + [XN], U, weights, law, meta)
