"""Geometry kernel tests.

Oracles used here are independent of the implementation: scipy's HiGHS LP
solver, interval arithmetic, hit-or-miss Monte Carlo volume, explicit
rotations of known boxes, and membership sampling.
"""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from densereach import geometry as geo
from densereach.errors import InfeasibleError, UnboundedError


def random_polytope(rng, d, extra_rows=4, scale=2.0):
    """Bounded, feasible polytope: a box cut by random halfspaces through it."""
    lo = -scale * np.ones(d)
    hi = scale * np.ones(d)
    box = geo.Polyhedron.from_box(lo, hi)
    A = rng.normal(size=(extra_rows, d))
    interior = rng.uniform(-0.5 * scale, 0.5 * scale, size=d)
    b = A @ interior + rng.uniform(0.3, 1.5, size=extra_rows)
    return geo.Polyhedron(np.vstack([box.A, A]), np.concatenate([box.b, b]))


# ---------------------------------------------------------------------- lp


class TestLP:
    def test_max_x1_over_unit_box(self):
        box = geo.Polyhedron.from_box([0, 0], [1, 1])
        val, x = geo.lp_solve(np.array([1.0, 0.0]), box, "max")
        assert val == pytest.approx(1.0, abs=1e-9)
        assert x[0] == pytest.approx(1.0, abs=1e-9)

    def test_max_x_plus_y_over_simplex(self):
        P = geo.Polyhedron(
            np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]),
            np.array([0.0, 0.0, 1.0]),
        )
        val, _ = geo.lp_solve(np.array([1.0, 1.0]), P, "max")
        assert val == pytest.approx(1.0, abs=1e-9)

    def test_contradictory_pair_infeasible(self):
        P = geo.Polyhedron(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))
        with pytest.raises(InfeasibleError):
            geo.lp_solve(np.array([1.0]), P, "max")
        assert not geo.is_feasible(P)

    def test_unbounded_reported_distinctly(self):
        P = geo.Polyhedron(np.array([[-1.0, 0.0]]), np.array([0.0]))  # x >= 0
        with pytest.raises(UnboundedError):
            geo.lp_solve(np.array([1.0, 0.0]), P, "max")

    def test_min_sense(self):
        box = geo.Polyhedron.from_box([-2, 3], [5, 7])
        val, x = geo.lp_solve(np.array([1.0, -1.0]), box, "min")
        assert val == pytest.approx(-2 - 7, abs=1e-9)

    def test_dimension_mismatch(self):
        box = geo.Polyhedron.from_box([0, 0], [1, 1])
        with pytest.raises(ValueError):
            geo.lp_solve(np.array([1.0]), box, "max")

    def test_against_scipy_on_random_bounded_instances(self, rng):
        for _ in range(120):
            d = int(rng.integers(1, 5))
            P = random_polytope(rng, d, extra_rows=int(rng.integers(1, 7)))
            c = rng.normal(size=d)
            ref = linprog(-c, A_ub=P.A, b_ub=P.b,
                          bounds=[(None, None)] * d, method="highs")
            val, x = geo.lp_solve(c, P, "max")
            assert ref.status == 0
            assert val == pytest.approx(-ref.fun, abs=1e-7, rel=1e-7)
            # optimum point is feasible and achieves the reported value
            assert np.all(P.A @ x <= P.b + 1e-8)
            assert float(c @ x) == pytest.approx(val, abs=1e-9)

    def test_infeasible_agreement_with_scipy(self, rng):
        hits = 0
        for _ in range(200):
            d = int(rng.integers(1, 4))
            m = int(rng.integers(d + 1, 10))
            A = rng.normal(size=(m, d))
            b = rng.normal(size=m) - 0.8
            P = geo.Polyhedron(A, b)
            ref = linprog(np.zeros(d), A_ub=A, b_ub=b,
                          bounds=[(None, None)] * d, method="highs")
            assert geo.is_feasible(P) == (ref.status == 0)
            hits += ref.status != 0
        assert hits > 10  # the family actually produced infeasible cases


class TestFeasibility:
    def test_unit_box(self):
        assert geo.is_feasible(geo.Polyhedron.from_box([0, 0], [1, 1]))

    def test_interval_oracle_on_random_boxes(self, rng):
        # A box system is feasible iff lo <= hi in every coordinate.
        for _ in range(100):
            d = int(rng.integers(1, 5))
            a = rng.uniform(-3, 3, size=d)
            bnd = rng.uniform(-3, 3, size=d)
            lo, hi = np.minimum(a, bnd), np.maximum(a, bnd)
            if rng.random() < 0.5:
                lo, hi = hi + 0.1, lo - 0.1  # deliberately inverted
            eye = np.eye(d)
            P = geo.Polyhedron(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))
            assert geo.is_feasible(P) == bool(np.all(lo <= hi))


class TestChebyshev:
    def test_center_of_box(self):
        box = geo.Polyhedron.from_box([0, 0], [2, 4])
        ctr, r = geo.chebyshev_center(box)
        assert r == pytest.approx(1.0, abs=1e-9)
        assert ctr[0] == pytest.approx(1.0, abs=1e-8)

    def test_center_interior(self, rng):
        for _ in range(25):
            P = random_polytope(rng, int(rng.integers(1, 5)))
            ctr, r = geo.chebyshev_center(P)
            assert r > 0
            assert np.all(P.A @ ctr <= P.b + 1e-9)

    def test_infeasible_raises(self):
        P = geo.Polyhedron(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))
        with pytest.raises(InfeasibleError):
            geo.chebyshev_center(P)


# ---------------------------------------------------------------- set ops


class TestIntersect:
    def test_with_whole_space(self):
        P = geo.Polyhedron.from_box([0, 0], [1, 1])
        whole = geo.Polyhedron(np.zeros((0, 2)), np.zeros(0))
        Q = geo.intersect(P, whole)
        assert Q.m == P.m

    def test_interval_overlap(self):
        a = geo.Polyhedron.from_box([0.0], [1.0])
        c = geo.intersect(a, geo.Polyhedron.from_box([0.5], [2.0]))
        assert geo.is_feasible(c)
        box = geo.bounding_box(c)
        assert box.lo[0] == pytest.approx(0.5)
        assert box.hi[0] == pytest.approx(1.0)

    def test_disjoint_boxes_infeasible(self):
        a = geo.Polyhedron.from_box([0.0], [1.0])
        b = geo.Polyhedron.from_box([2.0], [3.0])
        assert not geo.is_feasible(geo.intersect(a, b))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            geo.intersect(geo.Polyhedron.from_box([0], [1]),
                          geo.Polyhedron.from_box([0, 0], [1, 1]))


class TestRemoveRedundant:
    def test_duplicate_face_dropped(self):
        box = geo.Polyhedron.from_box([0, 0], [1, 1])
        dup = geo.Polyhedron(np.vstack([box.A, box.A[:1]]),
                             np.concatenate([box.b, box.b[:1]]))
        assert geo.remove_redundant(dup).m == 4

    def test_slack_halfspace_dropped(self):
        tri = geo.Polyhedron(
            np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0], [1.0, 0.0]]),
            np.array([0.0, 0.0, 1.0, 10.0]),
        )
        assert geo.remove_redundant(tri).m == 3

    def test_membership_preserved_sampling_oracle(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 5))
            P = random_polytope(rng, d, extra_rows=6)
            Q = geo.remove_redundant(P)
            assert Q.m <= P.m
            pts = rng.uniform(-2.5, 2.5, size=(1000, d))
            np.testing.assert_array_equal(
                P.contains(pts, tol=1e-9), Q.contains(pts, tol=1e-9)
            )

    def test_explicit_box_hint(self, rng):
        P = random_polytope(rng, 3, extra_rows=5)
        hint = geo.HyperRectangle(-2 * np.ones(3), 2 * np.ones(3))
        Q = geo.remove_redundant(P, box=hint)
        pts = rng.uniform(-2.5, 2.5, size=(500, 3))
        np.testing.assert_array_equal(P.contains(pts), Q.contains(pts))

    def test_return_index_points_at_surviving_rows(self, rng):
        for _ in range(25):
            d = int(rng.integers(1, 4))
            P = random_polytope(rng, d, extra_rows=6)
            Q, kept = geo.remove_redundant(P, return_index=True)
            assert len(kept) == Q.m
            # each surviving row is a positive rescaling of the original row
            # it claims to come from
            for row_a, row_b, j in zip(Q.A, Q.b, kept):
                orig_a, orig_b = P.A[j], P.b[j]
                scale = np.linalg.norm(orig_a)
                assert scale > 0
                np.testing.assert_allclose(row_a * scale, orig_a, atol=1e-9)
                assert row_b * scale == pytest.approx(orig_b, abs=1e-9)

    def test_return_index_duplicate_keeps_one(self):
        box = geo.Polyhedron.from_box([0, 0], [1, 1])
        dup = geo.Polyhedron(np.vstack([box.A, box.A[:1]]),
                             np.concatenate([box.b, box.b[:1]]))
        Q, kept = geo.remove_redundant(dup, return_index=True)
        assert Q.m == 4
        assert len(set(kept.tolist())) == 4


class TestVertices:
    def test_unit_square(self):
        V = geo.vertices(geo.Polyhedron.from_box([0, 0], [1, 1]))
        assert V.shape == (4, 2)

    def test_standard_simplex(self):
        P = geo.Polyhedron(
            np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]),
            np.array([0.0, 0.0, 1.0]),
        )
        assert geo.vertices(P).shape[0] == 3

    def test_rotated_box_matches_rotation_oracle(self, rng):
        for d in (2, 3, 4):
            # random rotation via QR
            q, _ = np.linalg.qr(rng.normal(size=(d, d)))
            lo, hi = -np.ones(d), np.ones(d) * 1.5
            eye = np.eye(d)
            # {x | q^T x in box} = rotated box
            P = geo.Polyhedron(np.vstack([eye, -eye]) @ q.T,
                               np.concatenate([hi, -lo]))
            V = geo.vertices(P)
            corners = np.array(list(itertools.product(*zip(lo, hi)))) @ q.T
            assert V.shape[0] == 2 ** d
            dist = np.abs(V[:, None, :] - corners[None, :, :]).max(axis=2).min(axis=1)
            assert dist.max() < 1e-8

    def test_unbounded_raises(self):
        P = geo.Polyhedron(np.array([[-1.0, 0.0], [0.0, -1.0]]), np.zeros(2))
        with pytest.raises(UnboundedError):
            geo.vertices(P)


class TestVolume:
    @pytest.mark.parametrize("d", [1, 2, 3, 4, 5, 6])
    def test_unit_hypercube(self, d):
        P = geo.Polyhedron.from_box(np.zeros(d), np.ones(d))
        assert geo.volume(P) == pytest.approx(1.0, rel=1e-9)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_standard_simplex(self, d):
        A = np.vstack([-np.eye(d), np.ones(d)])
        b = np.concatenate([np.zeros(d), [1.0]])
        fact = float(np.prod(np.arange(1, d + 1)))
        assert geo.volume(geo.Polyhedron(A, b)) == pytest.approx(1 / fact, rel=1e-9)

    def test_degenerate_returns_zero(self):
        # unit square squashed onto a segment
        P = geo.Polyhedron(
            np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
            np.array([1.0, 0.0, 0.0, 0.0]),
        )
        assert geo.volume(P) == 0.0

    def test_monte_carlo_oracle(self, rng):
        for _ in range(50):
            d = int(rng.integers(2, 5))
            P = random_polytope(rng, d, extra_rows=int(rng.integers(2, 6)))
            vol = geo.volume(P)
            lo = -2.0 * np.ones(d)
            hi = 2.0 * np.ones(d)
            pts = rng.uniform(lo, hi, size=(1_000_000, d))
            frac = float(np.mean(P.contains(pts)))
            mc = frac * np.prod(hi - lo)
            assert vol == pytest.approx(mc, rel=0.01, abs=1e-3)


class TestBoundingBox:
    def test_triangle(self):
        P = geo.Polyhedron(
            np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]),
            np.array([0.0, 0.0, 1.0]),
        )
        box = geo.bounding_box(P)
        np.testing.assert_allclose(box.lo, [0, 0], atol=1e-9)
        np.testing.assert_allclose(box.hi, [1, 1], atol=1e-9)

    def test_box_round_trip(self, rng):
        lo = rng.uniform(-3, 0, size=3)
        hi = lo + rng.uniform(0.5, 2, size=3)
        box = geo.bounding_box(geo.Polyhedron.from_box(lo, hi))
        np.testing.assert_allclose(box.lo, lo, atol=1e-9)
        np.testing.assert_allclose(box.hi, hi, atol=1e-9)

    def test_contains_all_vertices(self, rng):
        for _ in range(20):
            P = random_polytope(rng, int(rng.integers(2, 5)))
            box = geo.bounding_box(P)
            V = geo.vertices(P)
            assert box.contains(V, tol=1e-8).all()


class TestBoxesIntersect:
    def test_touching_faces(self):
        a = geo.HyperRectangle([0, 0], [1, 1])
        b = geo.HyperRectangle([1, 0], [2, 1])
        assert geo.boxes_intersect(a, b)

    def test_disjoint(self):
        a = geo.HyperRectangle([0, 0], [1, 1])
        b = geo.HyperRectangle([1.5, 0], [2, 1])
        assert not geo.boxes_intersect(a, b)

    def test_nested(self):
        a = geo.HyperRectangle([0, 0], [4, 4])
        b = geo.HyperRectangle([1, 1], [2, 2])
        assert geo.boxes_intersect(a, b)
        assert geo.boxes_intersect(b, a)

    def test_soundness_against_lp(self, rng):
        # never report 'disjoint' when the underlying boxes intersect
        for _ in range(1000):
            d = int(rng.integers(1, 4))
            lo1 = rng.uniform(-2, 2, size=d)
            hi1 = lo1 + rng.uniform(0.05, 1.5, size=d)
            lo2 = rng.uniform(-2, 2, size=d)
            hi2 = lo2 + rng.uniform(0.05, 1.5, size=d)
            r1, r2 = geo.HyperRectangle(lo1, hi1), geo.HyperRectangle(lo2, hi2)
            feas = geo.is_feasible(
                geo.intersect(r1.to_polyhedron(), r2.to_polyhedron())
            )
            if feas:
                assert geo.boxes_intersect(r1, r2)


class TestEliminate:
    def test_unit_square_to_interval(self):
        P = geo.eliminate(geo.Polyhedron.from_box([0, 0], [1, 1]), 1)
        assert P.d == 1
        box = geo.bounding_box(P)
        assert box.lo[0] == pytest.approx(0.0, abs=1e-9)
        assert box.hi[0] == pytest.approx(1.0, abs=1e-9)

    def test_equality_pair(self):
        # z = x encoded as two inequalities, 0 <= x <= 1; eliminate z
        A = np.array([
            [1.0, -1.0],   # x - z <= 0
            [-1.0, 1.0],   # z - x <= 0
            [1.0, 0.0],
            [-1.0, 0.0],
        ])
        b = np.array([0.0, 0.0, 1.0, 0.0])
        P = geo.eliminate(geo.Polyhedron(A, b), 1)
        box = geo.bounding_box(P)
        assert box.lo[0] == pytest.approx(0.0, abs=1e-9)
        assert box.hi[0] == pytest.approx(1.0, abs=1e-9)

    def test_projection_membership_sampling_oracle(self, rng):
        for _ in range(10):
            P = random_polytope(rng, 3, extra_rows=4)
            proj = geo.eliminate(P, 2)
            pts3 = rng.uniform(-2.2, 2.2, size=(1000, 3))
            inside3 = P.contains(pts3)
            # projection must contain the projection of every member
            assert proj.contains(pts3[inside3][:, :2]).all()
            # points reported in the projection must lift: check by LP
            pts2 = rng.uniform(-2.2, 2.2, size=(200, 2))
            for q in pts2[proj.contains(pts2, tol=-1e-9)]:
                lifted = geo.intersect(
                    P,
                    geo.Polyhedron(
                        np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1.0, 0], [0, -1, 0]]),
                        np.array([q[0], -q[0], q[1], -q[1]]),
                    ),
                )
                assert geo.is_feasible(lifted)

    def test_empty_stays_empty(self):
        P = geo.Polyhedron(np.array([[1.0, 0.0], [-1.0, 0.0]]),
                           np.array([0.0, -1.0]))
        assert not geo.is_feasible(geo.eliminate(P, 1))


class TestAffineImage:
    def test_identity(self, rng):
        P = random_polytope(rng, 3)
        Q = geo.affine_image(P, np.eye(3), np.zeros(3))
        pts = rng.uniform(-2.5, 2.5, size=(500, 3))
        np.testing.assert_array_equal(P.contains(pts), Q.contains(pts))

    def test_scaling_doubles_box(self):
        P = geo.Polyhedron.from_box([0, 0], [1, 1])
        Q = geo.affine_image(P, 2 * np.eye(2), np.zeros(2))
        assert geo.volume(Q) == pytest.approx(4.0, rel=1e-9)
        box = geo.bounding_box(Q)
        np.testing.assert_allclose(box.hi, [2, 2], atol=1e-9)

    def test_singular_projection_matches_elimination(self):
        P = geo.Polyhedron.from_box([0, 0], [1, 1])
        C = np.array([[1.0, 0.0], [0.0, 0.0]])
        Q = geo.affine_image(P, C, np.zeros(2))
        # image is the segment [0,1] x {0}
        assert geo.volume(Q) == 0.0
        assert Q.contains(np.array([0.5, 0.0]))
        assert not Q.contains(np.array([0.5, 0.2]))
        assert not Q.contains(np.array([1.5, 0.0]))

    def test_volume_scales_by_det(self, rng):
        for _ in range(10):
            P = random_polytope(rng, 2)
            C = rng.normal(size=(2, 2))
            if abs(np.linalg.det(C)) < 0.1:
                continue
            dv = rng.normal(size=2)
            Q = geo.affine_image(P, C, dv)
            assert geo.volume(Q) == pytest.approx(
                abs(np.linalg.det(C)) * geo.volume(P), rel=1e-6
            )

    def test_tall_map_embeds_segment_in_plane(self):
        # [0,1] under x -> (x, 2x + 1): the segment from (0,1) to (1,3)
        P = geo.Polyhedron.from_box([0.0], [1.0])
        C = np.array([[1.0], [2.0]])
        Q = geo.affine_image(P, C, np.array([0.0, 1.0]))
        assert Q.contains(np.array([0.0, 1.0]))
        assert Q.contains(np.array([0.5, 2.0]))
        assert Q.contains(np.array([1.0, 3.0]))
        assert not Q.contains(np.array([0.5, 2.3]))
        assert not Q.contains(np.array([1.2, 3.4]))

    def test_tall_map_membership_sampling_oracle(self, rng):
        for _ in range(10):
            P = random_polytope(rng, 2)
            C = rng.normal(size=(3, 2))
            dv = rng.normal(size=3)
            Q = geo.affine_image(P, C, dv)
            pts = rng.uniform(-2, 2, size=(300, 2))
            inside = pts[P.contains(pts)]
            if inside.size:
                images = inside @ C.T + dv
                assert Q.contains(images, tol=1e-7).all()

    def test_shape_validation(self):
        P = geo.Polyhedron.from_box([0, 0], [1, 1])
        with pytest.raises(ValueError):
            geo.affine_image(P, np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            geo.affine_image(P, np.eye(2), np.zeros(3))


# ----------------------------------------------------------------- hull


class TestHullHalfspaces:
    def test_one_dimensional_interval(self):
        P = geo.hull_halfspaces(np.array([[0.3], [-1.0], [2.0]]))
        assert P.contains([-1.0]) and P.contains([2.0]) and P.contains([0.0])
        assert not P.contains([2.1]) and not P.contains([-1.1])

    def test_unit_square_corners(self):
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=2)))
        P = geo.hull_halfspaces(corners)
        assert geo.volume(P) == pytest.approx(1.0, abs=1e-9)
        assert P.contains([0.5, 0.5]) and not P.contains([1.1, 0.5])

    def test_cloud_hull_matches_membership_and_volume(self, rng):
        from scipy.spatial import ConvexHull

        for d in (2, 3):
            pts = rng.normal(size=(40, d))
            P = geo.hull_halfspaces(pts)
            assert P.contains(pts, tol=1e-9).all()
            assert geo.volume(P) == pytest.approx(
                ConvexHull(pts).volume, rel=1e-9)
            outside = pts.mean(axis=0) + 10.0 * np.ones(d)
            assert not P.contains(outside)

    def test_rejects_empty_input(self):
        with pytest.raises(ValueError):
            geo.hull_halfspaces(np.zeros((0, 2)))


# ----------------------------------------------------------- properties


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_property_lp_value_dominates_samples(d, seed):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, d)
    c = rng.normal(size=d)
    val, _ = geo.lp_solve(c, P, "max")
    pts = rng.uniform(-2, 2, size=(200, d))
    inside = pts[P.contains(pts)]
    if inside.size:
        assert (inside @ c).max() <= val + 1e-7


@given(st.integers(2, 4), st.integers(0, 10_000))
@settings(max_examples=20)
def test_property_volume_shrinks_under_intersection(d, seed):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, d)
    cut = geo.Polyhedron(rng.normal(size=(1, d)), np.array([rng.uniform(0, 1)]))
    v_cut = geo.volume(geo.intersect(P, cut)) if geo.is_feasible(
        geo.intersect(P, cut)) else 0.0
    assert v_cut <= geo.volume(P) + 1e-9


@given(st.integers(1, 4), st.integers(0, 10_000))
@settings(max_examples=20)
def test_property_chebyshev_inside_with_margin(d, seed):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, d)
    ctr, r = geo.chebyshev_center(P)
    norms = np.linalg.norm(P.A, axis=1)
    assert np.all(P.A @ ctr - P.b <= -r * norms + 1e-7)
