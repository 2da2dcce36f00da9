"""Polytope, zonotope and ellipsoid primitives.

Everything here is a pure function of immutable values. The LP engine behind
pruning, membership oracles and certificates is scipy's HiGHS dual simplex.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from campc.errors import DimensionError, GeometryError

logger = logging.getLogger(__name__)

# coefficients below this are treated as exact zeros
ZERO_TOL = 1e-12
# relative size of the inflation applied to degenerate ellipsoid directions
EPS_INFLATE = 1e-9
ABS_TOL = 1e-9
BIG_RADIUS = 1e9
MAX_SIGN_GENERATORS = 16


def _vector(v, name="vector"):
    arr = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} has non-finite entries")
    return arr


def _frozen(arr):
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------- polytopes


@dataclass(frozen=True, eq=False)
class HPolytope:
    """{x : C x <= b}. A polytope with zero rows is the whole space."""

    C: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if C.ndim == 1:
            C = C.reshape(1, -1) if b.shape[0] == 1 else C.reshape(b.shape[0], -1)
        if C.ndim != 2 or C.shape[0] != b.shape[0]:
            raise DimensionError(f"C has shape {C.shape} but b has {b.shape[0]} entries")
        if C.shape[1] < 1:
            raise DimensionError("a polytope needs dim >= 1")
        if not np.all(np.isfinite(C)):
            raise GeometryError("constraint matrix has non-finite rows")
        if np.any(np.isnan(b)):
            raise GeometryError("offset vector has NaN entries")
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "b", _frozen(b))

    @classmethod
    def universe(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def from_box(cls, lo, hi):
        lo, hi = _vector(lo, "lower bound"), _vector(hi, "upper bound")
        if lo.shape != hi.shape:
            raise DimensionError("box bounds differ in length")
        eye = np.eye(lo.shape[0])
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def dim(self):
        return self.C.shape[1]

    @property
    def n_rows(self):
        return self.C.shape[0]

    def residual(self, x):
        """Largest row violation C x - b (negative inside)."""
        x = np.asarray(x, dtype=float)
        if self.n_rows == 0:
            return np.zeros(x.shape[0]) if x.ndim == 2 else 0.0
        if x.ndim == 2:
            return np.max(x @ self.C.T - self.b, axis=1)
        return float(np.max(self.C @ x - self.b))

    def contains(self, x, tol=ABS_TOL):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point of dim {x.shape[-1]} tested against polytope of dim {self.dim}")
        return self.residual(x) <= tol

    def intersect(self, other):
        if other.dim != self.dim:
            raise DimensionError(f"cannot intersect polytopes of dim {self.dim} and {other.dim}")
        return HPolytope(np.vstack([self.C, other.C]), np.concatenate([self.b, other.b]))

    def affine_preimage(self, M, t=None):
        """{x : M x + t in self}."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.dim:
            raise DimensionError(f"map with {M.shape[0]} outputs applied to polytope of dim {self.dim}")
        b = self.b if t is None else self.b - self.C @ np.asarray(t, dtype=float)
        return HPolytope(self.C @ M, b)

    def chebyshev_ball(self):
        """Return (radius, center) of the largest inscribed ball.

        A negative radius means the polytope is empty; ``inf`` means it contains
        arbitrarily large balls.
        """
        if self.n_rows == 0:
            return np.inf, np.zeros(self.dim)
        norms = np.linalg.norm(self.C, axis=1)
        A = np.hstack([self.C, norms[:, None]])
        cost = np.zeros(self.dim + 1)
        cost[-1] = -1.0
        bounds = [(None, None)] * self.dim + [(None, BIG_RADIUS)]
        res = linprog(cost, A_ub=A, b_ub=self.b, bounds=bounds, method="highs-ds")
        if res.status == 2:
            return -np.inf, np.full(self.dim, np.nan)
        if res.status != 0:
            raise GeometryError(f"Chebyshev LP failed: {res.message}")
        radius = float(res.x[-1])
        if radius >= 0.5 * BIG_RADIUS:
            radius = np.inf
        return radius, res.x[:-1]

    def is_empty(self, tol=ABS_TOL):
        radius, _ = self.chebyshev_ball()
        return radius < -tol

    def bounding_box(self):
        """Axis-aligned bounds; entries are +-inf along unbounded directions."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            up = lp_solve(e, self)
            down = lp_solve(-e, self)
            if up.status == "infeasible":
                raise GeometryError("bounding box of an empty polytope")
            hi[k] = up.value if up.status == "optimal" else np.inf
            lo[k] = -down.value if down.status == "optimal" else -np.inf
        return lo, hi

    def is_bounded(self):
        lo, hi = self.bounding_box()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def vertices(self):
        """Vertices of a bounded, full-dimensional polytope with dim <= 3."""
        if self.dim > 3:
            raise GeometryError(f"vertex enumeration is limited to dim <= 3, got {self.dim}")
        radius, center = self.chebyshev_ball()
        if not np.isfinite(radius):
            if radius > 0:
                raise GeometryError("cannot enumerate vertices of an unbounded polytope")
            raise GeometryError("cannot enumerate vertices of an empty polytope")
        if self.dim == 1:
            lo, hi = self.bounding_box()
            return np.array([lo, hi]) if hi[0] > lo[0] else lo[None, :]
        if radius <= ABS_TOL * max(1.0, np.abs(center).max()):
            raise GeometryError(f"polytope is lower-dimensional (Chebyshev radius {radius:.3e})")
        halfspaces = np.hstack([self.C, -self.b[:, None]])
        try:
            hs = HalfspaceIntersection(halfspaces, center)
        except QhullError as e:
            raise GeometryError(f"halfspace intersection failed: {e}") from e
        pts = hs.intersections
        if not np.all(np.isfinite(pts)):
            raise GeometryError("cannot enumerate vertices of an unbounded polytope")
        return _unique_points(pts)

    def support(self, direction):
        res = lp_solve(direction, self)
        if res.status == "optimal":
            return res.value
        if res.status == "unbounded":
            return np.inf
        raise GeometryError(f"support query failed with status {res.status}: {res.message}")

    def support_values(self, directions):
        """max_x d.x over the polytope for every row d of ``directions``."""
        D = np.atleast_2d(np.asarray(directions, dtype=float))
        if self.dim <= 3:
            try:
                V = self.vertices()
                return np.max(V @ D.T, axis=0)
            except GeometryError:
                logger.debug("vertex enumeration failed, falling back to one LP per direction")
        return np.array([self.support(d) for d in D])

    def sample(self, rng, k, oversample=4):
        """Uniform-ish samples by rejection from the bounding box (low dimensions only)."""
        lo, hi = self.bounding_box()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise GeometryError("cannot sample an unbounded polytope")
        out = []
        while sum(len(o) for o in out) < k:
            pts = rng.uniform(lo, hi, size=(oversample * k, self.dim))
            out.append(pts[self.contains(pts)])
        return np.vstack(out)[:k]


def _unique_points(pts, decimals=10):
    scale = max(1.0, float(np.abs(pts).max())) if pts.size else 1.0
    _, idx = np.unique(np.round(pts / scale, decimals), axis=0, return_index=True)
    return pts[np.sort(idx)]


# ---------------------------------------------------------------- LP engine


@dataclass(frozen=True, eq=False)
class LpResult:
    status: str
    x_opt: np.ndarray
    value: float
    message: str = ""
    duals: np.ndarray | None = None

    @property
    def optimal(self):
        return self.status == "optimal"


_LP_STATUS = {0: "optimal", 1: "max_iter", 2: "infeasible", 3: "unbounded"}


def lp_solve(cost, poly):
    """Maximize cost.x over poly."""
    cost = np.asarray(cost, dtype=float).reshape(-1)
    if cost.shape[0] != poly.dim:
        raise DimensionError(f"cost has {cost.shape[0]} entries, polytope has dim {poly.dim}")
    A_ub = poly.C if poly.n_rows else None
    b_ub = poly.b if poly.n_rows else None
    try:
        res = linprog(-cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * poly.dim, method="highs-ds")
    except ValueError as e:
        return LpResult("error", np.full(poly.dim, np.nan), np.nan, str(e))
    status = _LP_STATUS.get(res.status, "error")
    if status != "optimal":
        return LpResult(status, np.full(poly.dim, np.nan), np.nan, res.message)
    duals = None
    if poly.n_rows and getattr(res, "ineqlin", None) is not None:
        duals = -np.asarray(res.ineqlin.marginals)
    return LpResult("optimal", np.asarray(res.x), float(-res.fun), res.message, duals)


def infeasibility_certificate(poly, tol=ABS_TOL):
    """Row indices of a Farkas certificate when poly is empty, else ().

    Phase one: min s subject to C x - s <= b, s >= 0. A positive optimum means
    the rows carrying nonzero duals cannot be satisfied together.
    """
    if poly.n_rows == 0:
        return ()
    norms = np.linalg.norm(poly.C, axis=1)
    norms[norms <= ZERO_TOL] = 1.0
    C = poly.C / norms[:, None]
    b = poly.b / norms
    A = np.hstack([C, -np.ones((poly.n_rows, 1))])
    cost = np.zeros(poly.dim + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * poly.dim + [(0, None)]
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs-ds")
    if res.status != 0 or res.fun <= tol:
        return ()
    y = -np.asarray(res.ineqlin.marginals)
    return tuple(int(j) for j in np.flatnonzero(y > 1e-9 * max(1.0, y.max())))


# ---------------------------------------------------------------- pruning


def remove_redundant_rows(poly, tol=ABS_TOL):
    """Drop rows implied by the others; the set is unchanged.

    Empty polytopes come back as the rows of an infeasibility certificate.
    """
    dim = poly.dim
    if poly.n_rows == 0:
        return poly
    norms = np.linalg.norm(poly.C, axis=1)
    zero = norms <= ZERO_TOL
    if np.any(poly.b[zero] < -tol):
        j = int(np.flatnonzero(zero & (poly.b < -tol))[0])
        return HPolytope(poly.C[j : j + 1], poly.b[j : j + 1])
    C = poly.C[~zero] / norms[~zero, None]
    b = poly.b[~zero] / norms[~zero]
    if C.shape[0] == 0:
        return HPolytope.universe(dim)

    # identical normals: keep the tightest offset
    keys = np.round(C, 10)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    b_min = np.full(first.shape[0], np.inf)
    np.minimum.at(b_min, inverse, b)
    order = np.argsort(first)
    C, b = C[first[order]], b_min[order]
    if np.any(~np.isfinite(b)):
        finite = np.isfinite(b)
        C, b = C[finite], b[finite]
        if C.shape[0] == 0:
            return HPolytope.universe(dim)

    reduced = HPolytope(C, b)
    radius, center = reduced.chebyshev_ball()
    if radius < -tol:
        cert = infeasibility_certificate(reduced, tol)
        logger.debug("empty polytope, certificate rows %s", cert)
        return HPolytope(C[list(cert)], b[list(cert)]) if cert else reduced
    if dim == 1:
        up, down = C[:, 0] > 0, C[:, 0] < 0
        keep = []
        if np.any(up):
            keep.append(int(np.flatnonzero(up)[np.argmin(b[up])]))
        if np.any(down):
            keep.append(int(np.flatnonzero(down)[np.argmin(b[down])]))
        keep.sort()
        return HPolytope(C[keep], b[keep])

    scale = max(1.0, float(np.abs(center).max())) if np.all(np.isfinite(center)) else 1.0
    if np.isfinite(radius) and C.shape[0] > 3 * dim:
        lo, hi = reduced.bounding_box()
        box_max = np.maximum(C * lo, C * hi).sum(axis=1)
        inside = box_max <= b - tol * np.maximum(1.0, np.abs(b))
        if np.any(inside) and not np.all(inside):
            C, b = C[~inside], b[~inside]

    if radius > tol * scale and C.shape[0] > dim:
        slack = b - C @ center
        points = np.vstack([np.zeros(dim), C / slack[:, None]])
        try:
            hull = ConvexHull(points)
            keep = np.sort(hull.vertices[hull.vertices > 0] - 1)
            return HPolytope(C[keep], b[keep])
        except QhullError:
            logger.debug("dual hull failed, pruning with one LP per row")
    return _prune_by_lp(C, b, tol)


def _prune_by_lp(C, b, tol):
    keep = np.ones(C.shape[0], dtype=bool)
    for j in range(C.shape[0]):
        keep[j] = False
        others = HPolytope(np.vstack([C[keep], C[j]]), np.concatenate([b[keep], [b[j] + 1.0]]))
        res = lp_solve(C[j], others)
        if not (res.optimal and res.value <= b[j] + tol * max(1.0, abs(b[j]))):
            keep[j] = True
    return HPolytope(C[keep], b[keep])


def fourier_motzkin_eliminate(poly, var_index):
    """Project out coordinate ``var_index``; the result is pruned."""
    dim = poly.dim
    if not 0 <= var_index < dim:
        raise DimensionError(f"variable index {var_index} out of range for dim {dim}")
    if dim == 1:
        raise DimensionError("cannot eliminate the only coordinate of a polytope")
    a = poly.C[:, var_index]
    rest = np.delete(poly.C, var_index, axis=1)
    pos = a > ZERO_TOL
    neg = a < -ZERO_TOL
    flat = ~(pos | neg)

    Pc, Pb = rest[pos] / a[pos, None], poly.b[pos] / a[pos]
    Nc, Nb = rest[neg] / -a[neg, None], poly.b[neg] / -a[neg]
    pairs_C = (Pc[:, None, :] + Nc[None, :, :]).reshape(-1, dim - 1)
    pairs_b = (Pb[:, None] + Nb[None, :]).reshape(-1)

    C = np.vstack([rest[flat], pairs_C])
    b = np.concatenate([poly.b[flat], pairs_b])
    logger.debug("FM: %d+ x %d- pairs, %d kept rows", pos.sum(), neg.sum(), flat.sum())
    return remove_redundant_rows(HPolytope(C, b))


# ---------------------------------------------------------------- ellipsoids


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """E(L, q) = {x : ||L (x - q)|| <= 1}."""

    L: np.ndarray
    q: np.ndarray
    regularized: bool = False

    def __post_init__(self):
        L = np.atleast_2d(np.array(self.L, dtype=float))
        q = np.array(self.q, dtype=float).reshape(-1)
        if L.shape[0] != L.shape[1] or L.shape[0] != q.shape[0]:
            raise DimensionError(f"shape matrix {L.shape} does not match center of length {q.shape[0]}")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(q))):
            raise GeometryError("ellipsoid has non-finite entries")
        if np.linalg.cond(L) > 1.0 / np.finfo(float).eps:
            raise GeometryError("ellipsoid shape matrix is singular")
        object.__setattr__(self, "L", _frozen(L))
        object.__setattr__(self, "q", _frozen(q))

    @classmethod
    def ball(cls, center, radius):
        center = _vector(center, "center")
        return cls(np.eye(center.shape[0]) / radius, center)

    @classmethod
    def from_generator(cls, B, q):
        """{B u + q : ||u|| <= 1} for invertible B."""
        return cls(np.linalg.inv(np.atleast_2d(B)), q)

    @classmethod
    def from_shape(cls, shape, q):
        """Ellipsoid with shape matrix (L^T L)^-1 = ``shape``.

        Eigenvalues below (EPS_INFLATE * largest semi-axis)^2 are lifted to that
        floor and the result is flagged as regularized.
        """
        shape = np.atleast_2d(np.asarray(shape, dtype=float))
        shape = 0.5 * (shape + shape.T)
        w, V = np.linalg.eigh(shape)
        scale = max(1.0, float(np.sqrt(max(w.max(), 0.0))))
        floor = (EPS_INFLATE * scale) ** 2
        regularized = bool(np.any(w < floor))
        w = np.maximum(w, floor)
        return cls((V / np.sqrt(w)).T, q, regularized)

    @property
    def dim(self):
        return self.q.shape[0]

    @cached_property
    def L_inv(self):
        return np.linalg.inv(self.L)

    @cached_property
    def shape_matrix(self):
        return self.L_inv @ self.L_inv.T

    def membership(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.linalg.norm((x - self.q) @ self.L.T, axis=1)
        return float(np.linalg.norm(self.L @ (x - self.q)))

    def contains(self, x, tol=ABS_TOL):
        return self.membership(x) <= 1.0 + tol

    def support(self, c):
        return ellipsoid_support(c, self)

    def scaled(self, factor):
        """Scale about the center; semi-axes are multiplied by ``factor``."""
        return Ellipsoid(self.L / factor, self.q, self.regularized)

    def translated(self, t):
        return Ellipsoid(self.L, self.q + np.asarray(t, dtype=float), self.regularized)

    def log_volume(self):
        """log of the volume up to the unit-ball constant."""
        return float(-np.linalg.slogdet(self.L)[1])

    def sample_boundary(self, rng, k):
        u = rng.standard_normal((k, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return self.q + u @ self.L_inv.T

    def sample_interior(self, rng, k):
        u = rng.standard_normal((k, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        u *= rng.uniform(size=(k, 1)) ** (1.0 / self.dim)
        return self.q + u @ self.L_inv.T


def ellipsoid_support(c, E):
    """max over E of c.x = c.q + ||c L^-1||."""
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != E.dim:
        raise DimensionError(f"direction of length {c.shape[0]} for ellipsoid of dim {E.dim}")
    return float(c @ E.q + np.linalg.norm(c @ E.L_inv))


def halfspace_covers_ellipsoid(c, b, E):
    """True only if E lies inside {x : c.x <= b} (signed test)."""
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != E.dim:
        raise DimensionError(f"direction of length {c.shape[0]} for ellipsoid of dim {E.dim}")
    return bool(np.linalg.norm(c @ E.L_inv) <= b - c @ E.q)


def covered_rows(C, b, E, norms=None):
    """Row-wise halfspace_covers_ellipsoid; ``norms`` may hold precomputed ||c_j L^-1||."""
    if C.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if norms is None:
        norms = np.linalg.norm(C @ E.L_inv, axis=1)
    return norms <= b - C @ E.q


def affine_image_ellipsoid(M, t, E):
    """{M x + t : x in E}; rank deficiency is regularized outwards."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != E.dim:
        raise DimensionError(f"map with {M.shape[1]} inputs applied to ellipsoid of dim {E.dim}")
    t = np.zeros(M.shape[0]) if t is None else np.asarray(t, dtype=float).reshape(-1)
    image = Ellipsoid.from_shape(M @ E.shape_matrix @ M.T, M @ E.q + t)
    if image.regularized:
        logger.debug("affine image of dim %d is degenerate; regularized", image.dim)
    return image


def mvee(points, tol=1e-7, max_iter=20000):
    """Minimum-volume enclosing ellipsoid of a point cloud.

    Works inside the affine hull of the data; the missing directions get an
    EPS_INFLATE * scale radius. The result is rescaled so that every point is
    inside exactly.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size == 0:
        raise GeometryError("mvee of an empty point set")
    if not np.all(np.isfinite(P)):
        raise GeometryError("mvee input has non-finite points")
    k, d = P.shape
    scale = max(1.0, float(np.abs(P).max()))
    mean = P.mean(axis=0)
    Y = P - mean
    _, s, Vt = np.linalg.svd(Y, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * scale * np.sqrt(k)))
    basis = Vt[:rank].T
    Z = Y @ basis

    if rank == 0:
        shape_r, center_r = np.zeros((0, 0)), np.zeros(0)
    elif rank == 1:
        lo, hi = Z.min(), Z.max()
        shape_r, center_r = np.array([[(0.5 * (hi - lo)) ** 2]]), np.array([0.5 * (lo + hi)])
    else:
        if k > rank + 1:
            try:
                Z = Z[ConvexHull(Z).vertices]
            except QhullError:
                logger.debug("hull of %d points failed; running on all points", k)
        shape_r, center_r = _khachiyan(Z, tol, max_iter)

    floor = (EPS_INFLATE * scale) ** 2
    shape = basis @ shape_r @ basis.T + floor * (np.eye(d) - basis @ basis.T)
    E = Ellipsoid.from_shape(shape, mean + basis @ center_r)
    worst = float(np.max(E.membership(P)))
    if worst > 1.0:
        E = E.scaled(worst * (1.0 + 1e-12))
    if rank < d:
        logger.debug("mvee: point set of rank %d in dim %d, inflated by %.1e", rank, d, EPS_INFLATE * scale)
        E = Ellipsoid(E.L, E.q, True)
    return E


def _khachiyan(P, tol, max_iter):
    """Khachiyan iterations with away steps; returns (shape, center)."""
    n_pts, d = P.shape
    Q = np.vstack([P.T, np.ones(n_pts)])
    u = np.full(n_pts, 1.0 / n_pts)
    for it in range(max_iter):
        X = (Q * u) @ Q.T
        M = np.einsum("ij,ij->j", Q, np.linalg.solve(X, Q))
        j_up = int(np.argmax(M))
        support = np.flatnonzero(u > 0)
        j_down = int(support[np.argmin(M[support])])
        gap_up = M[j_up] / (d + 1) - 1.0
        gap_down = 1.0 - M[j_down] / (d + 1)
        if gap_up <= tol:
            break
        if gap_up >= gap_down:
            step = (M[j_up] - d - 1) / ((d + 1) * (M[j_up] - 1))
            u = (1.0 - step) * u
            u[j_up] += step
        else:
            step = min((d + 1 - M[j_down]) / ((d + 1) * (M[j_down] - 1)), u[j_down] / (1.0 - u[j_down]))
            u = (1.0 + step) * u
            u[j_down] -= step
            u[u < 0] = 0.0
    else:
        logger.debug("Khachiyan stopped at the iteration cap (%d)", max_iter)
    center = u @ P
    shape = d * ((P.T * u) @ P - np.outer(center, center))
    return shape, center


def inscribed_ellipsoid(poly, max_iter=200):
    """Large ellipsoid inside a bounded, full-dimensional polytope.

    Ascends log det B over {B u + q : ||u|| <= 1} from the Chebyshev ball and
    finally shrinks about the center until every row passes the analytic test.
    """
    d = poly.dim
    radius, center = poly.chebyshev_ball()
    if radius < 0:
        raise GeometryError(f"polytope is empty (Chebyshev radius {radius:.3e})")
    if not np.isfinite(radius):
        raise GeometryError("polytope is unbounded (Chebyshev radius is infinite)")
    scale = max(1.0, float(np.abs(center).max()), radius)
    if radius <= 1e-10 * scale:
        raise GeometryError(f"polytope is lower-dimensional (Chebyshev radius {radius:.3e})")

    work = remove_redundant_rows(poly)
    C, b = work.C, work.b
    tril = np.tril_indices(d)
    diag_pos = np.flatnonzero(tril[0] == tril[1])

    def unpack(z):
        B = np.zeros((d, d))
        B[tril] = z[d:]
        return z[:d], B

    def objective(z):
        return -np.sum(np.log(np.maximum(z[d:][diag_pos], 1e-300)))

    def objective_grad(z):
        g = np.zeros_like(z)
        g[d + diag_pos] = -1.0 / np.maximum(z[d:][diag_pos], 1e-300)
        return g

    def slack(z):
        q, B = unpack(z)
        return b - C @ q - np.linalg.norm(C @ B, axis=1)

    def slack_jac(z):
        q, B = unpack(z)
        CB = C @ B
        nrm = np.maximum(np.linalg.norm(CB, axis=1), 1e-300)
        J = np.empty((C.shape[0], z.shape[0]))
        J[:, :d] = -C
        J[:, d:] = -(C[:, tril[0]] * CB[:, tril[1]]) / nrm[:, None]
        return J

    z0 = np.concatenate([center, (radius * np.eye(d))[tril]])
    bounds = [(None, None)] * d + [
        (1e-12 * scale, None) if r == c else (None, None) for r, c in zip(*tril)
    ]
    best_q, best_B = center, radius * np.eye(d)
    try:
        res = minimize(
            objective, z0, jac=objective_grad, method="SLSQP", bounds=bounds,
            constraints=[{"type": "ineq", "fun": slack, "jac": slack_jac}],
            options={"maxiter": max_iter, "ftol": 1e-10},
        )
        q, B = unpack(res.x)
        if np.all(np.isfinite(res.x)) and np.all(np.diag(B) > 0) and poly.contains(q):
            if np.sum(np.log(np.diag(B))) > d * np.log(radius):
                best_q, best_B = q, B
        else:
            logger.debug("inscribed ellipsoid ascent left the polytope: %s", res.message)
    except (ValueError, np.linalg.LinAlgError) as e:
        logger.warning("inscribed ellipsoid ascent failed (%s); using the Chebyshev ball", e)

    best_q, best_B = _shrink_into(poly, best_q, best_B)
    return Ellipsoid.from_generator(best_B, best_q)


def _shrink_into(poly, q, B):
    if poly.n_rows == 0:
        return q, B
    room = poly.b - poly.C @ q
    if np.any(room <= 0):
        raise GeometryError("inscribed ellipsoid center is not interior")
    ratio = float(np.max(np.linalg.norm(poly.C @ B, axis=1) / room))
    if ratio >= 1.0 - 1e-12:
        B = B / (ratio * (1.0 + 1e-9))
    return q, B


# ---------------------------------------------------------------- zonotopes


@dataclass(frozen=True, eq=False)
class Zonotope:
    """center + sum_k [-1, 1] g_k with generators stored as columns."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = _vector(self.center, "center")
        G = np.array(self.generators, dtype=float)
        if G.size == 0:
            G = np.zeros((c.shape[0], 0))
        G = G.reshape(c.shape[0], -1) if G.ndim == 1 else G
        if G.shape[0] != c.shape[0]:
            raise DimensionError(f"generators of dim {G.shape[0]} for center of dim {c.shape[0]}")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "generators", _frozen(G))

    @classmethod
    def from_box(cls, lo, hi):
        lo, hi = _vector(lo), _vector(hi)
        half = 0.5 * (hi - lo)
        if np.any(half < 0):
            raise GeometryError("box with lo > hi")
        G = np.diag(half)[:, half > 0]
        return cls(0.5 * (lo + hi), G)

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def n_generators(self):
        return self.generators.shape[1]

    def support(self, c):
        c = np.asarray(c, dtype=float).reshape(-1)
        return float(c @ self.center + np.abs(c @ self.generators).sum())

    def linear_map(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Zonotope(M @ self.center, M @ self.generators)

    def minkowski_sum(self, other):
        if other.dim != self.dim:
            raise DimensionError("Minkowski sum of zonotopes with different dims")
        return Zonotope(self.center + other.center, np.hstack([self.generators, other.generators]))

    def interval_hull(self):
        r = np.abs(self.generators).sum(axis=1)
        return self.center - r, self.center + r

    def vertices(self):
        G = self.generators
        scale = max(1.0, float(np.abs(G).max())) if G.size else 1.0
        G = G[:, np.linalg.norm(G, axis=0) > ZERO_TOL * scale]
        c = self.center
        if G.shape[1] == 0:
            return c[None, :]
        if self.dim == 1:
            r = np.abs(G).sum()
            return np.array([c - r, c + r])
        if self.dim == 2:
            return _zonogon_vertices(c, G)
        if G.shape[1] > MAX_SIGN_GENERATORS:
            raise GeometryError(
                f"{G.shape[1]} generators in dim {self.dim}: too many for sign enumeration"
            )
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=G.shape[1])))
        pts = c + signs @ G.T
        try:
            return pts[ConvexHull(pts).vertices]
        except QhullError:
            return _unique_points(pts)

    def contains(self, x, tol=ABS_TOL):
        """LP membership: exists xi in [-1, 1]^k with G xi = x - center."""
        x = _vector(x, "point")
        k = self.n_generators
        if k == 0:
            return bool(np.linalg.norm(x - self.center, np.inf) <= tol)
        res = linprog(
            np.zeros(k), A_eq=self.generators, b_eq=x - self.center,
            bounds=[(-1.0 - tol, 1.0 + tol)] * k, method="highs-ds",
        )
        return res.status == 0

    def sample(self, rng, k):
        xi = rng.uniform(-1.0, 1.0, size=(k, self.n_generators))
        return self.center + xi @ self.generators.T


def _zonogon_vertices(c, G):
    # orient every generator into the upper half plane, merge parallel ones
    G = G.copy()
    flip = (G[1] < 0) | ((G[1] == 0) & (G[0] < 0))
    G[:, flip] *= -1.0
    angles = np.arctan2(G[1], G[0])
    G = G[:, np.argsort(angles, kind="stable")]
    merged = [G[:, 0]]
    for g in G.T[1:]:
        last = merged[-1]
        cross = last[0] * g[1] - last[1] * g[0]
        if abs(cross) <= 1e-12 * np.linalg.norm(last) * np.linalg.norm(g):
            merged[-1] = last + g
        else:
            merged.append(g)
    merged = np.array(merged)
    p = c - merged.sum(axis=0)
    verts = []
    for g in merged:
        p = p + 2.0 * g
        verts.append(p)
    for g in merged:
        p = p - 2.0 * g
        verts.append(p)
    return _unique_points(np.array(verts))


@dataclass(frozen=True, eq=False)
class VertexSet:
    """Convex hull of finitely many points, for non-box input sets."""

    points: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.array(self.points, dtype=float))
        if P.shape[1] == 1:
            P = np.array([[P.min()], [P.max()]])
        elif P.shape[0] > P.shape[1] + 1:
            try:
                P = P[ConvexHull(P).vertices]
            except QhullError:
                P = _unique_points(P)
        object.__setattr__(self, "points", _frozen(P))

    @classmethod
    def from_polytope(cls, poly):
        return cls(poly.vertices())

    @property
    def dim(self):
        return self.points.shape[1]

    def support(self, c):
        return float(np.max(self.points @ np.asarray(c, dtype=float)))

    def linear_map(self, M):
        return VertexSet(self.points @ np.atleast_2d(M).T)

    def minkowski_sum(self, other):
        pts = (self.points[:, None, :] + other.points[None, :, :]).reshape(-1, self.dim)
        return VertexSet(pts)

    def vertices(self):
        return self.points
