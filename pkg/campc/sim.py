"""Closed-loop simulation, trace capture, comparison and auditing."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from campc.controller import MODES, CaMpcController, check_conditions
from campc.errors import ConfigError, DimensionError, InfeasibleError
from campc.geometry import covered_rows
from campc.model import is_feasible_state

logger = logging.getLogger(__name__)

VARIANTS = MODES
AUDIT_TOL = 1e-7


@dataclass(frozen=True)
class RunConfig:
    variant: str
    x0: tuple
    steps: int = 100
    deltaU: float | None = None
    verify: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if (self.deltaU is not None) != (self.variant == "approx"):
            raise ConfigError("deltaU is required for, and only for, the approx variant")
        if self.deltaU is not None and self.deltaU <= 0:
            raise ConfigError(f"deltaU bound must be positive, got {self.deltaU}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))


@dataclass(frozen=True)
class AuditRecord:
    c1: bool
    c2: bool
    c3: bool
    detail: str = ""

    @property
    def passed(self):
        return self.c1 and self.c2 and self.c3


@dataclass(frozen=True)
class TraceStep:
    k: int
    x: tuple
    u: tuple
    status: str
    iterations: int
    solve_time: float
    t_index: float
    t_qp: float
    value: float
    retained: int
    removed_fwd: int
    removed_bwd: int
    removed_opt: int
    total_constraints: int
    violation: float
    input_violation: float = 0.0
    used_fallback: bool = False
    audit: AuditRecord | None = None

    @property
    def retained_percent(self):
        return 100.0 * self.retained / max(1, self.total_constraints)


@dataclass
class ClosedLoopTrace:
    config: RunConfig
    steps: list = field(default_factory=list)
    final_state: tuple = ()
    halted: bool = False
    infeasible_step: int | None = None
    message: str = ""

    def __len__(self):
        return len(self.steps)

    @property
    def states(self):
        """x_0..x_K including the state after the last applied input."""
        rows = [s.x for s in self.steps] + ([self.final_state] if self.final_state else [])
        return np.array(rows, dtype=float)

    @property
    def inputs(self):
        return np.array([s.u for s in self.steps], dtype=float)

    @property
    def values(self):
        return np.array([s.value for s in self.steps])

    @property
    def retained_percentages(self):
        return [s.retained_percent for s in self.steps]

    @property
    def max_violation(self):
        return max((s.violation for s in self.steps), default=0.0)

    @property
    def max_input_violation(self):
        return max((s.input_violation for s in self.steps), default=0.0)

    def violations(self, tol=1e-9):
        """Steps whose state or applied input breaks its constraints."""
        return sum(1 for s in self.steps if max(s.violation, s.input_violation) > tol)

    def audit_tallies(self):
        audited = [s.audit for s in self.steps if s.audit is not None]
        return {
            "audited": len(audited),
            "c1_failures": sum(1 for a in audited if not a.c1),
            "c2_failures": sum(1 for a in audited if not a.c2),
            "c3_failures": sum(1 for a in audited if not a.c3),
        }

    def step_times(self, skip_first=True):
        """Per-step (total, index, qp) wall-clock seconds; the warm-up step is excluded."""
        steps = self.steps[1:] if skip_first and len(self.steps) > 1 else self.steps
        return (
            np.array([s.solve_time for s in steps]),
            np.array([s.t_index for s in steps]),
            np.array([s.t_qp for s in steps]),
        )

    def summary(self):
        total, index, qp = self.step_times()
        pct = self.retained_percentages
        return {
            "variant": self.config.variant,
            "config": asdict(self.config),
            "steps": len(self.steps),
            "halted": self.halted,
            "message": self.message,
            "violations": self.violations(),
            "max_violation": self.max_violation,
            "max_input_violation": self.max_input_violation,
            "infeasible_steps": int(self.infeasible_step is not None),
            "infeasible_step": self.infeasible_step,
            "fallbacks": sum(1 for s in self.steps if s.used_fallback),
            "retained_percent": pct,
            "average_retained_percent": float(np.mean(pct)) if pct else 0.0,
            "max_step_time_us": float(total.max() * 1e6) if total.size else 0.0,
            "median_step_time_us": float(np.median(total) * 1e6) if total.size else 0.0,
            "max_index_time_us": float(index.max() * 1e6) if index.size else 0.0,
            "max_qp_time_us": float(qp.max() * 1e6) if qp.size else 0.0,
            "audits": self.audit_tallies(),
        }


@dataclass(frozen=True)
class TraceComparison:
    state_deviation: tuple
    input_deviation: tuple
    value_deviation: tuple
    max_state_deviation: float
    max_input_deviation: float
    max_value_deviation: float
    tol: float
    value_tol: float = 1e-7

    @property
    def equal(self):
        return (self.max_state_deviation <= self.tol and self.max_input_deviation <= self.tol
                and self.max_value_deviation <= self.value_tol)

    def to_dict(self):
        return {
            "max_state_deviation": self.max_state_deviation,
            "max_input_deviation": self.max_input_deviation,
            "max_value_deviation": self.max_value_deviation,
            "equal": self.equal,
            "tol": self.tol,
            "value_tol": self.value_tol,
        }


def compare_traces(a, b, tol=1e-6, value_tol=1e-7):
    """Per-step deviations of a from b; values are compared relative to max(1, |b|)."""
    if len(a) != len(b):
        raise DimensionError(f"traces differ in length: {len(a)} vs {len(b)}")
    dx = np.abs(a.states - b.states).max(axis=1) if len(a) else np.zeros(0)
    du = np.abs(a.inputs - b.inputs).max(axis=1) if len(a) else np.zeros(0)
    dv = np.abs(a.values - b.values) / np.maximum(1.0, np.abs(b.values)) if len(a) else np.zeros(0)
    return TraceComparison(
        tuple(float(v) for v in dx),
        tuple(float(v) for v in du),
        tuple(float(v) for v in dv),
        float(dx.max(initial=0.0)),
        float(du.max(initial=0.0)),
        float(dv.max(initial=0.0)),
        tol,
        value_tol,
    )


def audit_step(problem, x, sets, idx, sol, tol=AUDIT_TOL):
    """C1 and C2 on the realized minimizer, C3 by re-running each removal certificate."""
    c1, c2 = check_conditions(problem, x, sets, sol.U_star, tol)
    c3 = True
    failed = []
    for i, S in enumerate(sets, start=1):
        removed = idx.removed[i - 1]
        if len(removed) == 0:
            continue
        Xi = problem.X[i - 1]
        C, b = Xi.C[removed], Xi.b[removed]
        covered = np.zeros(len(removed), dtype=bool)
        for E in S.sources():
            if E is not None:
                covered |= covered_rows(C, b, E)
        if not np.all(covered):
            c3 = False
            failed.append(f"step {i}: rows {removed[~covered][:5].tolist()}")
    return AuditRecord(c1, c2, c3, "; ".join(failed))


def state_violation(problem, x):
    """Row violation of x against the stage constraints (normalized rows)."""
    X = problem.X[0]
    if X.n_rows == 0:
        return 0.0
    norms = np.linalg.norm(X.C, axis=1)
    return float(np.max((X.C @ x - X.b) / norms))


def input_violation(problem, u):
    """Row violation of an applied input against U (normalized rows)."""
    U = problem.U
    if U.n_rows == 0:
        return 0.0
    norms = np.linalg.norm(U.C, axis=1)
    return float(np.max((U.C @ np.asarray(u, dtype=float) - U.b) / norms))


def resolve_initial_state(problem, x0, policy="scale", tol=1e-3):
    """Return (x0 to use, scale factor).

    ``strict`` keeps x0 and raises if it is infeasible; ``scale`` moves it
    towards the origin (by bisection) until the full problem is feasible.
    """
    x0 = np.asarray(x0, dtype=float)
    if is_feasible_state(problem, x0):
        return x0, 1.0
    if policy == "strict":
        raise InfeasibleError("x0 infeasible")
    if policy != "scale":
        raise ConfigError(f"unknown x0 policy {policy!r}")
    if not is_feasible_state(problem, np.zeros_like(x0)):
        raise InfeasibleError("x0 infeasible and the origin is infeasible too")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_feasible_state(problem, mid * x0):
            lo = mid
        else:
            hi = mid
    logger.warning("x0 infeasible; scaled by %.4f towards the origin", lo)
    return lo * x0, lo


def simulate(problem, offline, config, controller=None):
    """Run the closed loop x_{k+1} = A x_k + B u_k for ``config.steps`` steps."""
    x = np.asarray(config.x0, dtype=float)
    if x.shape != (problem.n,) or not np.all(np.isfinite(x)):
        raise DimensionError(f"x0 must be a finite vector of length {problem.n}")
    if controller is None:
        controller = CaMpcController(problem, offline, config.variant, config.deltaU)
    trace = ClosedLoopTrace(config)
    for k in range(config.steps):
        try:
            res = controller.step(x)
        except InfeasibleError as e:
            if k == 0:
                raise InfeasibleError("x0 infeasible") from e
            logger.error("QP infeasible at step %d: %s", k, e)
            trace.halted = True
            trace.infeasible_step = k
            trace.message = f"infeasible at step {k}"
            break
        sol = res.solution
        audit = audit_step(problem, x, res.sets, res.index_sets, sol) if config.verify else None
        rep = res.report
        trace.steps.append(TraceStep(
            k=k,
            x=tuple(float(v) for v in x),
            u=tuple(float(v) for v in res.u),
            status=sol.status,
            iterations=sol.iterations,
            solve_time=res.solve_time,
            t_index=res.t_index,
            t_qp=res.t_qp,
            value=sol.value,
            retained=rep.total_retained,
            removed_fwd=sum(rep.removed_fwd),
            removed_bwd=sum(rep.removed_bwd),
            removed_opt=sum(rep.removed_opt),
            total_constraints=rep.total_constraints,
            violation=state_violation(problem, x),
            input_violation=input_violation(problem, res.u),
            used_fallback=res.used_fallback,
            audit=audit,
        ))
        x = problem.sys.step(x, res.u)
    trace.final_state = tuple(float(v) for v in x)
    return trace
