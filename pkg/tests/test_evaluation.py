"""Estimator and summary tests.

Oracles: closed-form kernel normalization (the 1-D Epanechnikov peak is
3/4 because (3/4)(1 - u^2) integrates to one on [-1, 1]); closed-form
polygon areas (unit square, regular hexagon 3*sqrt(3)/2); exact
integrate-to-one identities for histograms; law-of-large-numbers bands
for uniform samples; and a gain-free transport model whose density is
the initial density itself, making the true KL exactly zero.
"""
import numpy as np
import pytest

from densereach import evaluation as ev
from densereach import nets, reach
from densereach.distributions import InitialDistribution
from densereach.errors import DimensionalityError
from densereach.geometry import HyperRectangle, Polyhedron


def box_cell(lo, hi, rho_hi, p_lo, source=0):
    bb = HyperRectangle(lo, hi)
    return reach.ReachCell(state_set=bb.to_polyhedron(), rho_lo=0.0,
                           rho_hi=rho_hi, p_lo=p_lo, p_hi=p_lo,
                           source=source, t=1.0)


class TestHistogram:
    def test_single_bin_density_is_inverse_volume(self, rng):
        S = rng.uniform([0.0, 0.0], [2.0, 0.5], size=(100, 2))
        est = ev.histogram_density(S, bins_per_dim=1)
        vol = np.prod(S.max(axis=0) - S.min(axis=0))
        mid = 0.5 * (S.min(axis=0) + S.max(axis=0))
        assert ev.evaluate_density(est, mid) == pytest.approx(1.0 / vol,
                                                              rel=1e-12)

    def test_uniform_samples_fill_bins_evenly(self, rng):
        S = rng.uniform(0.0, 1.0, size=100_000)
        est = ev.histogram_density(S, bins_per_dim=10)
        centers = est.payload["edges"][0][:-1] + 0.05
        vals = ev.evaluate_density(est, centers)
        assert np.all(np.abs(vals - 1.0) < 0.05)

    def test_integrates_to_one_exactly(self, rng):
        S = rng.standard_normal((500, 2))
        est = ev.histogram_density(S, bins_per_dim=7)
        edges = est.payload["edges"]
        binvol = np.prod([e[1] - e[0] for e in edges])
        assert est.payload["density"].sum() * binvol == pytest.approx(
            1.0, abs=1e-12)

    def test_outside_the_box_is_zero(self, rng):
        S = rng.uniform(0.0, 1.0, size=(50, 2))
        est = ev.histogram_density(S, bins_per_dim=3)
        assert ev.evaluate_density(est, [5.0, 5.0]) == 0.0
        assert ev.evaluate_density(est, [-5.0, 0.5]) == 0.0

    def test_right_edge_belongs_to_last_bin(self):
        est = ev.histogram_density(np.linspace(0.0, 1.0, 11), 5)
        top = ev.evaluate_density(est, 1.0)
        assert top > 0.0

    def test_seven_dimensions_rejected(self, rng):
        S = rng.uniform(0.0, 1.0, size=(20, 7))
        with pytest.raises(DimensionalityError, match="at most 4"):
            ev.histogram_density(S, 4)

    def test_bad_bin_count_rejected(self, rng):
        with pytest.raises(ValueError, match="bins_per_dim"):
            ev.histogram_density(rng.uniform(size=(10, 2)), 0)


class TestKde:
    def test_single_sample_peak_value(self):
        est = ev.kde_density(np.array([[0.0]]), bandwidth=1.0)
        assert ev.evaluate_density(est, 0.0) == pytest.approx(0.75, abs=1e-15)
        # and the kernel's parabola shape at half bandwidth
        assert ev.evaluate_density(est, 0.5) == pytest.approx(
            0.75 * 0.75, abs=1e-15)

    def test_zero_beyond_bandwidth(self):
        est = ev.kde_density(np.array([[0.0], [0.2]]), bandwidth=0.5)
        assert ev.evaluate_density(est, 1.5) == 0.0
        assert ev.evaluate_density(est, -0.51) == 0.0

    def test_integrates_to_one_1d(self, rng):
        S = rng.standard_normal(200)
        est = ev.kde_density(S)
        grid = np.linspace(S.min() - 1.0, S.max() + 1.0, 4001)
        vals = ev.evaluate_density(est, grid)
        assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-3)

    def test_integrates_to_one_2d(self, rng):
        S = rng.uniform(-1.0, 1.0, size=(100, 2))
        est = ev.kde_density(S)
        g = np.linspace(-2.0, 2.0, 161)
        GX, GY = np.meshgrid(g, g)
        vals = ev.evaluate_density(est, np.column_stack([GX.ravel(),
                                                         GY.ravel()]))
        total = vals.reshape(GX.shape).sum() * (g[1] - g[0]) ** 2
        assert total == pytest.approx(1.0, abs=1e-2)

    def test_default_bandwidth_matches_reference_rule(self, rng):
        S = rng.standard_normal((400, 2)) * np.array([1.0, 3.0])
        est = ev.kde_density(S)
        expect = 1.06 * S.std(axis=0, ddof=1) * 400 ** (-1.0 / 6.0)
        assert np.allclose(est.payload["bandwidth"], expect, rtol=1e-12)

    def test_rejects_bad_bandwidth_and_lone_sample(self):
        with pytest.raises(ValueError, match="positive"):
            ev.kde_density(np.zeros((5, 1)), bandwidth=0.0)
        with pytest.raises(ValueError, match="fewer than two"):
            ev.kde_density(np.zeros((1, 2)))

    def test_everywhere_nonnegative(self, rng):
        est = ev.kde_density(rng.standard_normal((50, 2)))
        pts = rng.uniform(-4.0, 4.0, size=(300, 2))
        assert np.all(ev.evaluate_density(est, pts) >= 0.0)


class TestEvaluateConventions:
    def test_single_point_gives_float_batch_gives_array(self, rng):
        est2 = ev.kde_density(rng.uniform(size=(30, 2)))
        assert isinstance(ev.evaluate_density(est2, [0.5, 0.5]), float)
        out = ev.evaluate_density(est2, rng.uniform(size=(4, 2)))
        assert out.shape == (4,)
        est1 = ev.histogram_density(rng.uniform(size=40), 4)
        assert ev.evaluate_density(est1, np.full(3, 0.5)).shape == (3,)
        assert isinstance(ev.evaluate_density(est1, 0.5), float)

    def test_dimension_mismatch_rejected(self, rng):
        est = ev.kde_density(rng.uniform(size=(30, 3)))
        with pytest.raises(ValueError, match="dimension"):
            ev.evaluate_density(est, np.zeros((5, 2)))


class TestKlDivergence:
    def test_exact_model_scores_zero(self, rng):
        box = HyperRectangle([-1.0, -1.0], [1.0, 1.0])
        rho0 = InitialDistribution.uniform(box)
        net = nets.init_net(2, (6,), seed=3)
        # at t = 0 the transported density is the initial density itself
        est = ev.learned_density(net, rho0, t=0.0)
        X = rho0.sample(200, rng)
        pairs = [(x, rho0.pdf(x)) for x in X]
        assert ev.kl_divergence(pairs, est) == pytest.approx(0.0, abs=1e-12)

    def test_kde_close_to_uniform_truth(self, rng):
        X = rng.uniform(0.0, 1.0, size=5000)
        est = ev.kde_density(X)
        pairs = [(x, 1.0) for x in rng.uniform(0.05, 0.95, size=400)]
        kl = ev.kl_divergence(pairs, est)
        assert -0.05 < kl < 0.3

    def test_floor_keeps_zero_mass_regions_finite(self, rng):
        est = ev.kde_density(np.zeros((5, 1)) + 0.5, bandwidth=0.1)
        kl = ev.kl_divergence([(5.0, 1.0)], est, floor=1e-12)
        assert kl == pytest.approx(np.log(1e12), rel=1e-12)

    def test_worse_fit_scores_higher(self, rng):
        X = rng.uniform(0.0, 1.0, size=3000)
        good = ev.kde_density(X)
        bad = ev.kde_density(X * 0.2)  # concentrated in [0, 0.2]
        pairs = [(x, 1.0) for x in rng.uniform(0.05, 0.95, size=300)]
        assert ev.kl_divergence(pairs, good) < ev.kl_divergence(pairs, bad)

    def test_rejects_bad_floor_and_empty_input(self):
        est = ev.kde_density(np.zeros((3, 1)) + 0.5, bandwidth=1.0)
        with pytest.raises(ValueError, match="floor"):
            ev.kl_divergence([(0.5, 1.0)], est, floor=0.0)
        with pytest.raises(ValueError, match="nonempty"):
            ev.kl_divergence([], est)


class TestVolumeAtProbability:
    def test_single_cell_any_threshold(self):
        cells = [box_cell([0.0, 0.0], [2.0, 1.0], rho_hi=1.0, p_lo=1.0)]
        for thr in (0.1, 0.5, 1.0):
            vol, ach = ev.volume_at_probability(cells, thr)
            assert vol == pytest.approx(2.0, abs=1e-9)
            assert ach == 1.0

    def test_threshold_one_takes_everything(self):
        cells = [box_cell([0, 0], [1, 1], 3.0, 0.3),
                 box_cell([1, 0], [2, 1], 2.0, 0.3),
                 box_cell([2, 0], [3, 1], 1.0, 0.4)]
        vol, ach = ev.volume_at_probability(cells, 1.0)
        assert vol == pytest.approx(3.0, abs=1e-9)
        assert ach == pytest.approx(1.0, abs=1e-12)

    def test_densest_cells_taken_first(self):
        thin = box_cell([0, 0], [1, 1], rho_hi=10.0, p_lo=0.5)
        wide = box_cell([1, 0], [4, 1], rho_hi=1.0, p_lo=0.5, source=1)
        vol, ach = ev.volume_at_probability([wide, thin], 0.4)
        assert vol == pytest.approx(1.0, abs=1e-9)
        assert ach == pytest.approx(0.5, abs=1e-12)

    def test_monotone_in_threshold(self, rng):
        cells = [box_cell([k, 0], [k + 1, 1], rho_hi=float(10 - k),
                          p_lo=0.1, source=k) for k in range(10)]
        vols = [ev.volume_at_probability(cells, thr)[0]
                for thr in (0.2, 0.4, 0.6, 0.8, 1.0)]
        assert all(a <= b + 1e-12 for a, b in zip(vols, vols[1:]))

    def test_bad_threshold_rejected(self):
        cells = [box_cell([0, 0], [1, 1], 1.0, 1.0)]
        for thr in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError, match="threshold"):
                ev.volume_at_probability(cells, thr)


class TestConvexHullArea:
    def test_unit_square(self):
        pts = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.2, 0.9]]
        assert ev.convex_hull_area_2d(pts) == pytest.approx(1.0, abs=1e-12)

    def test_regular_hexagon(self):
        ang = np.arange(6) * np.pi / 3.0
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
        assert ev.convex_hull_area_2d(pts) == pytest.approx(
            3.0 * np.sqrt(3.0) / 2.0, abs=1e-9)

    def test_collinear_points_have_zero_area(self):
        pts = [[0, 0], [1, 1], [2, 2], [3, 3]]
        assert ev.convex_hull_area_2d(pts) == 0.0

    def test_matches_reference_hull_on_random_clouds(self, rng):
        from scipy.spatial import ConvexHull
        for _ in range(5):
            pts = rng.standard_normal((40, 2))
            assert ev.convex_hull_area_2d(pts) == pytest.approx(
                ConvexHull(pts).volume, rel=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="three"):
            ev.convex_hull_area_2d([[0, 0], [1, 1]])
        with pytest.raises(ValueError, match="n, 2"):
            ev.convex_hull_area_2d(np.zeros((5, 3)))
