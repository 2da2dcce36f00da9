"""Random instances and the randomized verification suites behind `verify`."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from campc.controller import (
    IndexSets,
    delta_rows,
    first_order_ellipsoid,
    solve_reduced,
)
from campc.errors import CampcError
from campc.geometry import (
    Ellipsoid,
    HPolytope,
    Zonotope,
    ellipsoid_support,
    fourier_motzkin_eliminate,
    halfspace_covers_ellipsoid,
    inscribed_ellipsoid,
    lp_solve,
    mvee,
)
from campc.model import CostWeights, LtiSystem, MpcProblem, is_feasible_state
from campc.qp import QpSpec, assemble_reduced_qp, solve_qp
from campc.reach import compute_offline, delta_input_set

logger = logging.getLogger(__name__)

MATCH_TOL = 1e-7
MAX_DRAWS_PER_CASE = 10


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)
    shortfall: int = 0

    @property
    def ok(self):
        return self.failed == 0 and self.passed > 0 and self.shortfall == 0

    def record(self, ok, note=""):
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            if len(self.failures) < 20:
                self.failures.append(note)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "failed": self.failed,
                "skipped": self.skipped, "shortfall": self.shortfall, "failures": list(self.failures)}


def _random_rows(rng, n, k, lo, hi):
    C = rng.standard_normal((k, n))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    return C, rng.uniform(lo, hi, size=k)


def random_instance(rng, n=None, N=None, max_rows=40):
    """Small bounded MPC problem with the origin strictly inside every set."""
    n = int(rng.integers(1, 4)) if n is None else n
    N = int(rng.integers(1, 6)) if N is None else N
    A = np.eye(n) + 0.3 * rng.standard_normal((n, n))
    B = 0.5 * rng.standard_normal((n, 1))
    box = float(rng.uniform(3.0, 6.0))
    eye = np.eye(n)
    X = []
    for _ in range(N - 1):
        k = int(rng.integers(1, max_rows - 2 * n + 1))
        C, b = _random_rows(rng, n, k, 0.5, 3.0)
        X.append(HPolytope(np.vstack([eye, -eye, C]), np.concatenate([box * np.ones(2 * n), b])))
    r_T = float(rng.uniform(0.5, 2.0))
    k = int(rng.integers(0, 5))
    C, b = _random_rows(rng, n, k, 0.4, 2.0)
    X.append(HPolytope(np.vstack([eye, -eye, C]), np.concatenate([r_T * np.ones(2 * n), b])))
    u_max = float(rng.uniform(0.5, 2.0))
    U = HPolytope(np.array([[1.0], [-1.0]]), np.array([u_max, u_max]))
    Q = np.diag(rng.uniform(0.1, 2.0, size=n))
    weights = CostWeights(Q, Q * rng.uniform(1.0, 3.0), np.array([[rng.uniform(0.1, 2.0)]]))
    return MpcProblem.build(LtiSystem(A, B), N, X, U, weights, meta={"name": "random", "n": n, "N": N})


def random_state(rng, problem, scale=None):
    scale = float(rng.uniform(0.2, 3.0)) if scale is None else scale
    return scale * rng.uniform(-1.0, 1.0, size=problem.n)


def feasible_input_sequence(rng, problem, x):
    """Midpoint of two LP vertices of the admissible input sequences, or None."""
    M, d = problem.full_constraints(x)
    region = HPolytope(M, d)
    points = []
    for _ in range(2):
        res = lp_solve(rng.standard_normal(problem.n_inputs), region)
        if not res.optimal:
            return None
        points.append(res.x_opt)
    return 0.5 * (points[0] + points[1])


def solve_full(problem, x, warm=None, extra=None):
    return solve_qp(assemble_reduced_qp(problem, x, IndexSets.full(problem), extra), warm_start=warm)


def _matches(a, b, tol=MATCH_TOL):
    scale = max(1.0, float(np.abs(b).max()))
    return float(np.abs(a - b).max()) <= tol * scale


def _draws(result, cases, per_case=MAX_DRAWS_PER_CASE):
    """Case numbers until `cases` instances were evaluated or the draw budget runs out."""
    budget = per_case * cases
    for case in range(budget):
        if result.passed + result.failed >= cases:
            return
        yield case
    result.shortfall = cases - (result.passed + result.failed)
    if result.shortfall:
        logger.warning("%s: only %d of %d cases evaluated after %d draws",
                       result.name, cases - result.shortfall, cases, budget)


def exactness_suite(rng, cases):
    """Reduced vs full minimizers, feasibility classification and relaxation monotonicity."""
    result = SuiteResult("exactness")
    for case in _draws(result, cases):
        problem = random_instance(rng)
        try:
            offline = compute_offline(problem)
        except CampcError as e:
            result.skipped += 1
            logger.debug("case %d skipped: %s", case, e)
            continue
        x = random_state(rng, problem)
        feasible = is_feasible_state(problem, x)
        warm = feasible_input_sequence(rng, problem, x) if feasible else None
        _, _, reduced = solve_reduced(problem, offline, x, warm)
        full = solve_full(problem, x)
        if not feasible:
            result.record(reduced.status == "infeasible" and full.status == "infeasible",
                          f"case {case}: infeasible state classified {reduced.status}/{full.status}")
            continue
        ok = reduced.optimal and full.optimal and _matches(reduced.U_star, full.U_star)
        ok = ok and reduced.value <= full.value + 1e-9 * max(1.0, abs(full.value))
        result.record(ok, f"case {case}: reduced {reduced.status} vs full {full.status}")
    return result


def approx_suite(rng, cases):
    """Reduced-augmented vs full-augmented minimizers."""
    result = SuiteResult("approx-augmented")
    for case in _draws(result, cases):
        problem = random_instance(rng)
        u_max = float(problem.U.b[0])
        bound = float(rng.uniform(0.1, 0.6)) * u_max
        try:
            offline = compute_offline(problem, delta_bound=bound)
        except CampcError as e:
            result.skipped += 1
            logger.debug("case %d skipped: %s", case, e)
            continue
        x = random_state(rng, problem, scale=float(rng.uniform(0.1, 1.5)))
        if not is_feasible_state(problem, x):
            result.skipped += 1
            continue
        U_tilde = feasible_input_sequence(rng, problem, x)
        if U_tilde is None:
            result.skipped += 1
            continue
        extra = delta_rows(problem, U_tilde, delta_input_set(problem.m, bound))
        nominal = problem.predict(x, U_tilde)
        _, _, reduced = solve_reduced(problem, offline, x, U_tilde, extra=extra, nominal=nominal)
        full = solve_full(problem, x, U_tilde, extra)
        ok = reduced.optimal and full.optimal and _matches(reduced.U_star, full.U_star)
        result.record(ok, f"case {case}: reduced {reduced.status} vs full {full.status}")
    return result


def random_qp(rng, n_vars=None, n_rows=None):
    """Strictly convex QP with a known feasible point; returns (spec, feasible point)."""
    n_vars = int(rng.integers(1, 7)) if n_vars is None else n_vars
    n_rows = int(rng.integers(0, 13)) if n_rows is None else n_rows
    G = np.triu(rng.standard_normal((n_vars, n_vars)))
    G[np.diag_indices(n_vars)] = rng.uniform(0.3, 2.0, size=n_vars)
    U_tilde = rng.standard_normal(n_vars)
    M = rng.standard_normal((n_rows, n_vars))
    d = M @ U_tilde + rng.uniform(0.0, 1.0, size=n_rows)
    return QpSpec(G, 2.0 * rng.standard_normal(n_vars), M, d), U_tilde


def optimality_suite(rng, cases):
    """Constrained minimizers lie in the first-order optimality ellipsoid."""
    result = SuiteResult("optimality-ellipsoid")
    for case in range(cases):
        spec, U_tilde = random_qp(rng)
        sol = solve_qp(spec)
        if not sol.optimal:
            result.record(False, f"case {case}: solver status {sol.status}")
            continue
        E = first_order_ellipsoid(spec.G, spec.q0, U_tilde)
        result.record(E.membership(sol.U_star) <= 1.0 + MATCH_TOL,
                      f"case {case}: membership {E.membership(sol.U_star):.3e}")
    return result


def _random_ellipsoid(rng, n):
    L = np.triu(rng.standard_normal((n, n)))
    L[np.diag_indices(n)] = rng.uniform(0.3, 3.0, size=n)
    return Ellipsoid(L, rng.standard_normal(n))


def geometry_suite(rng, cases, triples=1000, covers=halfspace_covers_ellipsoid):
    """Support/halfspace agreement, fit containment and Fourier-Motzkin projections."""
    result = SuiteResult("geometry")
    for t in range(triples):
        n = int(rng.integers(1, 5))
        E = _random_ellipsoid(rng, n)
        c = rng.standard_normal(n)
        b = float(c @ E.q + rng.uniform(-2.0, 2.0) * np.linalg.norm(c))
        support = ellipsoid_support(c, E)
        if abs(support - b) <= 1e-9 * max(1.0, abs(b)):
            continue
        result.record(covers(c, b, E) == (support <= b), f"triple {t}: support {support:.6f} b {b:.6f}")

    for case in range(cases):
        Z = Zonotope(rng.standard_normal(2), rng.standard_normal((2, int(rng.integers(1, 8)))))
        V = Z.vertices()
        E = mvee(V)
        result.record(bool(np.all(E.membership(V) <= 1.0 + MATCH_TOL)), f"mvee case {case}")

        C, b = _random_rows(rng, 2, int(rng.integers(3, 12)), 0.5, 2.0)
        P = HPolytope(C, b)
        if P.is_bounded():
            inner = inscribed_ellipsoid(P)
            pts = inner.sample_boundary(rng, 1000)
            result.record(bool(np.all(P.contains(pts))), f"inscribed case {case}")

    for case in range(max(1, cases // 10)):
        C, b = _random_rows(rng, 3, 10, 0.5, 2.0)
        lifted = HPolytope(C, b)
        projected = fourier_motzkin_eliminate(lifted, 2)
        pts = rng.uniform(-3.0, 3.0, size=(100, 2))
        for p in pts:
            fixed = HPolytope(lifted.C[:, 2:], lifted.b - lifted.C[:, :2] @ p)
            lp = lp_solve(np.zeros(1), fixed)
            inside_lp = lp.status in ("optimal", "unbounded")
            slack = projected.residual(p) if projected.n_rows else -1.0
            if abs(slack) <= 1e-7:
                continue
            result.record(inside_lp == (slack <= 0), f"FM case {case}: point {p}")
    return result


def run_all(seed, cases):
    rng = np.random.default_rng(seed)
    return [
        exactness_suite(rng, cases),
        approx_suite(rng, cases),
        optimality_suite(rng, 5 * cases),
        geometry_suite(rng, cases),
    ]
