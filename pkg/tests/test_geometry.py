import numpy as np
import pytest

from campc.errors import DimensionError, GeometryError
from campc.geometry import (
    Ellipsoid,
    HPolytope,
    VertexSet,
    Zonotope,
    affine_image_ellipsoid,
    covered_rows,
    ellipsoid_support,
    fourier_motzkin_eliminate,
    halfspace_covers_ellipsoid,
    infeasibility_certificate,
    inscribed_ellipsoid,
    lp_solve,
    mvee,
    remove_redundant_rows,
)


def unit_square():
    return HPolytope.from_box([-1.0, -1.0], [1.0, 1.0])


def as_set(points, decimals=8):
    return {tuple(np.round(p, decimals)) for p in points}


class TestHPolytope:
    def test_box_membership(self):
        P = unit_square()
        assert P.dim == 2 and P.n_rows == 4
        assert P.contains([0.5, -0.5])
        assert not P.contains([1.5, 0.0])
        assert P.residual([0.0, 0.0]) == pytest.approx(-1.0)
        assert list(P.contains(np.array([[0.0, 0.0], [2.0, 0.0]]))) == [True, False]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            unit_square().contains([0.0, 0.0, 0.0])
        with pytest.raises(DimensionError):
            HPolytope(np.eye(2), [1.0, 1.0, 1.0])

    def test_chebyshev_ball(self):
        radius, center = unit_square().chebyshev_ball()
        assert radius == pytest.approx(1.0)
        np.testing.assert_allclose(center, 0.0, atol=1e-9)

    def test_empty_polytope_and_certificate(self):
        P = HPolytope([[1.0], [-1.0]], [-1.0, -1.0])
        assert P.is_empty()
        assert set(infeasibility_certificate(P)) == {0, 1}
        assert infeasibility_certificate(unit_square()) == ()

    def test_universe(self):
        U = HPolytope.universe(3)
        assert U.n_rows == 0
        assert U.contains([1e6, -1e6, 0.0])

    def test_vertices_of_square(self):
        assert as_set(unit_square().vertices()) == as_set([[-1, -1], [-1, 1], [1, -1], [1, 1]])

    def test_vertices_of_unbounded_polytope(self):
        with pytest.raises(GeometryError):
            HPolytope([[1.0, 0.0]], [1.0]).vertices()

    def test_bounding_box_and_support(self):
        P = HPolytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0, 0.0])
        lo, hi = P.bounding_box()
        np.testing.assert_allclose(lo, [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(hi, [1.0, 1.0], atol=1e-9)
        assert P.support([1.0, 2.0]) == pytest.approx(2.0)
        np.testing.assert_allclose(P.support_values([[1.0, 0.0], [1.0, 1.0]]), [1.0, 1.0])

    def test_affine_preimage(self):
        P = unit_square().affine_preimage(2.0 * np.eye(2), [1.0, 0.0])
        assert P.contains([-0.9, 0.4])
        assert not P.contains([0.1, 0.0])

    def test_sample_stays_inside(self, rng):
        P = HPolytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0, 0.0])
        pts = P.sample(rng, 50)
        assert pts.shape == (50, 2)
        assert np.all(P.contains(pts))


class TestLp:
    def test_optimal(self):
        res = lp_solve([1.0, 1.0], unit_square())
        assert res.optimal
        assert res.value == pytest.approx(2.0)
        np.testing.assert_allclose(res.x_opt, [1.0, 1.0])

    def test_unbounded_and_infeasible(self):
        assert lp_solve([-1.0, 0.0], HPolytope([[1.0, 0.0]], [1.0])).status == "unbounded"
        assert lp_solve([1.0], HPolytope([[1.0], [-1.0]], [-1.0, -1.0])).status == "infeasible"


class TestRedundancy:
    def test_drops_implied_rows(self):
        P = unit_square()
        extra = HPolytope([[1.0, 1.0], [2.0, 0.0], [0.0, 1.0]], [10.0, 4.0, 1.0])
        reduced = remove_redundant_rows(P.intersect(extra))
        assert reduced.n_rows == 4

    def test_same_set(self, rng):
        C = rng.standard_normal((40, 2))
        C /= np.linalg.norm(C, axis=1, keepdims=True)
        P = HPolytope(C, rng.uniform(1.0, 2.0, size=40))
        reduced = remove_redundant_rows(P)
        assert reduced.n_rows <= P.n_rows
        pts = rng.uniform(-3.0, 3.0, size=(2000, 2))
        inside, inside_reduced = P.residual(pts), reduced.residual(pts)
        clear = np.abs(inside) > 1e-7
        np.testing.assert_array_equal((inside <= 0)[clear], (inside_reduced <= 1e-9)[clear])

    def test_every_tangent_row_is_needed(self):
        theta = 2 * np.pi * np.arange(12) / 12
        C = np.column_stack([np.cos(theta), np.sin(theta)])
        assert remove_redundant_rows(HPolytope(C, np.ones(12))).n_rows == 12

    def test_one_dimensional(self):
        P = HPolytope([[1.0], [2.0], [-1.0], [-3.0]], [1.0, 1.0, 2.0, 3.0])
        reduced = remove_redundant_rows(P)
        assert reduced.n_rows == 2
        assert reduced.contains([0.5]) and not reduced.contains([0.6])


class TestFourierMotzkin:
    def test_cube_projects_to_square(self):
        cube = HPolytope.from_box(-np.ones(3), np.ones(3))
        square = fourier_motzkin_eliminate(cube, 2)
        assert square.dim == 2
        assert as_set(square.vertices()) == as_set(unit_square().vertices())

    def test_projection_of_simplex(self):
        # x, y, z >= 0, x + y + z <= 1 projects onto x, y >= 0, x + y <= 1
        P = HPolytope([[-1, 0, 0], [0, -1, 0], [0, 0, -1], [1, 1, 1]], [0, 0, 0, 1])
        tri = fourier_motzkin_eliminate(P, 2)
        assert tri.n_rows == 3
        assert as_set(tri.vertices()) == as_set([[0, 0], [1, 0], [0, 1]])

    def test_single_coordinate(self):
        with pytest.raises(DimensionError):
            fourier_motzkin_eliminate(HPolytope([[1.0]], [1.0]), 0)
        with pytest.raises(DimensionError):
            fourier_motzkin_eliminate(unit_square(), 2)


class TestEllipsoid:
    def test_ball_support_and_membership(self):
        E = Ellipsoid.ball([1.0, 0.0], 2.0)
        assert ellipsoid_support([1.0, 0.0], E) == pytest.approx(3.0)
        assert E.support([0.0, -1.0]) == pytest.approx(2.0)
        assert E.membership([3.0, 0.0]) == pytest.approx(1.0)
        assert E.contains([1.0, 1.9]) and not E.contains([1.0, 2.1])

    def test_signed_halfspace_test(self):
        E = Ellipsoid.ball([0.0, 0.0], 1.0)
        assert halfspace_covers_ellipsoid([1.0, 0.0], 1.0, E)
        assert not halfspace_covers_ellipsoid([1.0, 0.0], 0.99, E)
        # the ellipsoid is far on the wrong side: an unsigned distance test would accept this
        assert not halfspace_covers_ellipsoid([1.0, 0.0], -5.0, E)

    def test_covered_rows_agrees_with_single_test(self, rng):
        E = Ellipsoid(np.array([[2.0, 0.3], [0.0, 0.5]]), [0.2, -0.1])
        C = rng.standard_normal((30, 2))
        b = rng.uniform(-2.0, 3.0, size=30)
        expected = [halfspace_covers_ellipsoid(c, bj, E) for c, bj in zip(C, b)]
        np.testing.assert_array_equal(covered_rows(C, b, E), expected)
        norms = np.linalg.norm(C @ E.L_inv, axis=1)
        np.testing.assert_array_equal(covered_rows(C, b, E, norms), expected)

    def test_affine_image(self):
        E = Ellipsoid.ball([0.0, 0.0], 1.0)
        image = affine_image_ellipsoid(2.0 * np.eye(2), [1.0, 0.0], E)
        assert image.support([1.0, 0.0]) == pytest.approx(3.0)
        assert not image.regularized

    def test_rank_deficient_image_is_regularized(self):
        E = Ellipsoid.ball([0.0, 0.0], 1.0)
        image = affine_image_ellipsoid(np.array([[1.0, 0.0], [0.0, 0.0]]), None, E)
        assert image.regularized
        assert image.contains([1.0, 0.0])

    def test_scaled_translated_and_volume(self):
        E = Ellipsoid.ball([0.0, 0.0], 1.0)
        assert E.scaled(2.0).support([1.0, 0.0]) == pytest.approx(2.0)
        assert E.translated([1.0, 1.0]).contains([1.0, 1.9])
        assert E.scaled(2.0).log_volume() - E.log_volume() == pytest.approx(2 * np.log(2.0))

    def test_sampling(self, rng):
        E = Ellipsoid(np.array([[1.0, 0.5], [0.0, 2.0]]), [1.0, -1.0])
        np.testing.assert_allclose(E.membership(E.sample_boundary(rng, 100)), 1.0)
        assert np.all(E.membership(E.sample_interior(rng, 100)) <= 1.0 + 1e-12)

    def test_singular_shape(self):
        with pytest.raises(GeometryError):
            Ellipsoid(np.zeros((2, 2)), [0.0, 0.0])


class TestFits:
    def test_mvee_of_square_is_circumcircle(self):
        E = mvee(unit_square().vertices())
        np.testing.assert_allclose(E.q, 0.0, atol=1e-6)
        assert E.log_volume() == pytest.approx(np.log(2.0), abs=1e-4)

    def test_mvee_contains_every_point(self, rng):
        pts = rng.standard_normal((60, 3))
        E = mvee(pts)
        assert np.all(E.membership(pts) <= 1.0 + 1e-9)
        assert not E.regularized

    def test_mvee_of_flat_data_is_inflated(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        E = mvee(pts)
        assert E.regularized
        assert np.all(E.membership(pts) <= 1.0 + 1e-9)

    def test_mvee_of_nothing(self):
        with pytest.raises(GeometryError):
            mvee(np.zeros((0, 2)))

    def test_inscribed_ellipsoid_of_square(self, rng):
        E = inscribed_ellipsoid(unit_square())
        assert np.all(unit_square().contains(E.sample_boundary(rng, 500)))
        assert E.log_volume() == pytest.approx(0.0, abs=1e-2)

    def test_inscribed_ellipsoid_of_triangle(self, rng):
        P = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
        E = inscribed_ellipsoid(P)
        assert np.all(np.linalg.norm(P.C @ E.L_inv, axis=1) <= P.b - P.C @ E.q)
        radius, _ = P.chebyshev_ball()
        assert E.log_volume() >= 2 * np.log(radius) - 1e-6

    def test_inscribed_ellipsoid_rejects_bad_input(self):
        with pytest.raises(GeometryError):
            inscribed_ellipsoid(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]))
        with pytest.raises(GeometryError):
            inscribed_ellipsoid(HPolytope([[1.0, 0.0]], [1.0]))


class TestZonotope:
    def test_box(self):
        Z = Zonotope.from_box([-1.0, 0.0], [1.0, 2.0])
        assert Z.n_generators == 2
        assert as_set(Z.vertices()) == as_set([[-1, 0], [-1, 2], [1, 0], [1, 2]])
        assert Z.support([1.0, 1.0]) == pytest.approx(3.0)
        lo, hi = Z.interval_hull()
        np.testing.assert_allclose(lo, [-1.0, 0.0])
        np.testing.assert_allclose(hi, [1.0, 2.0])

    def test_hexagon(self):
        Z = Zonotope([0.0, 0.0], np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]))
        assert len(Z.vertices()) == 6

    def test_parallel_generators_merge(self):
        Z = Zonotope([0.0, 0.0], np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]]))
        assert as_set(Z.vertices()) == as_set([[-3, -1], [-3, 1], [3, -1], [3, 1]])

    def test_linear_map_and_sum(self):
        Z = Zonotope.from_box([-1.0], [1.0]).linear_map(np.array([[1.0], [2.0]]))
        S = Z.minkowski_sum(Zonotope([1.0, 0.0], np.array([[0.0], [1.0]])))
        assert S.n_generators == 2
        assert S.support([0.0, 1.0]) == pytest.approx(3.0)

    def test_contains_and_samples(self, rng):
        Z = Zonotope([0.0, 0.0, 0.0], rng.standard_normal((3, 4)))
        assert all(Z.contains(p) for p in Z.sample(rng, 10))
        assert not Z.contains(Z.center + 100.0)

    def test_vertices_in_three_dimensions(self):
        Z = Zonotope.from_box(-np.ones(3), np.ones(3))
        assert len(Z.vertices()) == 8


def test_vertex_set_keeps_extremes_in_one_dimension():
    V = VertexSet(np.array([[0.5], [-2.0], [1.0], [0.0]]))
    np.testing.assert_allclose(V.points.ravel(), [-2.0, 1.0])
    assert V.linear_map(np.array([[2.0], [0.0]])).support([1.0, 0.0]) == pytest.approx(2.0)
