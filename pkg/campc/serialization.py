"""JSON documents for problems and offline artifacts, CSV for traces."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from campc.errors import ArtifactMismatchError
from campc.geometry import Ellipsoid, HPolytope
from campc.model import CostWeights, LtiSystem, MpcProblem, TerminalLaw
from campc.reach import ARTIFACT_VERSION, BackwardReachOffline, ForwardReachOffline, OfflineArtifacts

logger = logging.getLogger(__name__)

PROBLEM_VERSION = 1
TRACE_COLUMNS_TAIL = (
    "status", "iters", "solve_time_us", "retained", "removed_fwd", "removed_bwd",
    "removed_opt", "total_constraints", "index_time_us", "qp_time_us", "value",
)


def _matrix(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return {"rows": a.shape[0], "cols": a.shape[1], "data": a.tolist()}


def _from_matrix(doc):
    a = np.array(doc["data"], dtype=float).reshape(doc["rows"], doc["cols"])
    return a


def _polytope(P):
    return {"C": _matrix(P.C) if P.n_rows else {"rows": 0, "cols": P.dim, "data": []}, "b": P.b.tolist()}


def _from_polytope(doc):
    C = doc["C"]
    if C["rows"] == 0:
        return HPolytope.universe(C["cols"])
    return HPolytope(_from_matrix(C), doc["b"])


def _ellipsoid(E):
    return {"L": _matrix(E.L), "q": E.q.tolist(), "regularized": bool(E.regularized)}


def _from_ellipsoid(doc):
    return Ellipsoid(_from_matrix(doc["L"]), doc["q"], bool(doc.get("regularized", False)))


def problem_to_dict(problem):
    return {
        "version": PROBLEM_VERSION,
        "N": problem.N,
        "A": _matrix(problem.sys.A),
        "B": _matrix(problem.sys.B),
        "Q": _matrix(problem.weights.Q),
        "P": _matrix(problem.weights.P),
        "R": _matrix(problem.weights.R),
        "U": _polytope(problem.U),
        "X": [_polytope(Xi) for Xi in problem.X],
        "K_T": None if problem.terminal_law is None else _matrix(problem.terminal_law.K_T),
        "meta": problem.meta,
        "checksum": problem.checksum(),
    }


def problem_from_dict(doc):
    sys = LtiSystem(_from_matrix(doc["A"]), _from_matrix(doc["B"]))
    weights = CostWeights(_from_matrix(doc["Q"]), _from_matrix(doc["P"]), _from_matrix(doc["R"]))
    law = None if doc.get("K_T") is None else TerminalLaw(_from_matrix(doc["K_T"]))
    X = [_from_polytope(x) for x in doc["X"]]
    problem = MpcProblem.build(sys, int(doc["N"]), X, _from_polytope(doc["U"]), weights, law, doc.get("meta"))
    if "checksum" in doc and doc["checksum"] != problem.checksum():
        raise ArtifactMismatchError("problem document checksum does not match its contents")
    return problem


def offline_to_dict(offline):
    doc = {
        "version": offline.version,
        "N": offline.N,
        "checksum": offline.checksum,
        "forward": [_ellipsoid(E) for E in offline.forward.ellipsoids],
        "backward": None,
        "forward_norms": [n.tolist() for n in offline.forward_norms],
        "backward_norms": [n.tolist() for n in offline.backward_norms],
        "delta_bound": offline.delta_bound,
        "forward_delta": None,
        "delta_norms": [n.tolist() for n in offline.delta_norms],
    }
    if offline.backward is not None:
        doc["backward"] = {
            "inner": [_ellipsoid(E) for E in offline.backward.inner],
            "outer": [_ellipsoid(E) for E in offline.backward.outer],
            "polytopes": [_polytope(H) for H in offline.backward.polytopes],
        }
    if offline.forward_delta is not None:
        doc["forward_delta"] = [_ellipsoid(E) for E in offline.forward_delta.ellipsoids]
    return doc


def offline_from_dict(doc):
    if doc.get("version") != ARTIFACT_VERSION:
        raise ArtifactMismatchError(f"offline artifact version {doc.get('version')} is not {ARTIFACT_VERSION}")
    backward = None
    if doc.get("backward") is not None:
        bw = doc["backward"]
        backward = BackwardReachOffline(
            tuple(_from_ellipsoid(e) for e in bw["inner"]),
            tuple(_from_ellipsoid(e) for e in bw["outer"]),
            tuple(_from_polytope(p) for p in bw.get("polytopes", [])),
        )
    forward_delta = None
    if doc.get("forward_delta") is not None:
        forward_delta = ForwardReachOffline(tuple(_from_ellipsoid(e) for e in doc["forward_delta"]))
    return OfflineArtifacts(
        N=int(doc["N"]),
        forward=ForwardReachOffline(tuple(_from_ellipsoid(e) for e in doc["forward"])),
        backward=backward,
        forward_norms=tuple(np.array(n, dtype=float) for n in doc["forward_norms"]),
        backward_norms=tuple(np.array(n, dtype=float) for n in doc["backward_norms"]),
        checksum=doc["checksum"],
        delta_bound=doc.get("delta_bound"),
        forward_delta=forward_delta,
        delta_norms=tuple(np.array(n, dtype=float) for n in doc.get("delta_norms", [])),
        version=int(doc["version"]),
    )


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def save_problem(problem, path):
    return write_json(path, problem_to_dict(problem))


def load_problem(path):
    return problem_from_dict(read_json(path))


def save_offline(offline, path, config=None):
    doc = offline_to_dict(offline)
    if config is not None:
        doc["config"] = config
    return write_json(path, doc)


def load_offline(path):
    return offline_from_dict(read_json(path))


def trace_header(n, m):
    return ["k"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + list(TRACE_COLUMNS_TAIL)


def write_trace_csv(trace, path, n, m, echo=None):
    """One row per step; ``echo`` goes into a leading '# ' comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if echo is not None:
            f.write("# " + json.dumps(echo, sort_keys=True) + "\n")
        writer = csv.writer(f)
        writer.writerow(trace_header(n, m))
        for s in trace.steps:
            writer.writerow(
                [s.k]
                + [repr(v) for v in s.x]
                + [repr(v) for v in s.u]
                + [
                    s.status, s.iterations, f"{s.solve_time * 1e6:.1f}", s.retained,
                    s.removed_fwd, s.removed_bwd, s.removed_opt, s.total_constraints,
                    f"{s.t_index * 1e6:.1f}", f"{s.t_qp * 1e6:.1f}", repr(s.value),
                ]
            )
    return path


def read_trace_csv(path):
    """Rows of a trace CSV as dicts (comment line skipped)."""
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))
