"""Initial-distribution tests.

Oracles: scipy.stats.truncnorm for one-dimensional truncated-Gaussian
moments and masses, Simpson quadrature for normalization, dense grids and
Monte Carlo for density bounds and box masses.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import simpson

from densereach.distributions import InitialDistribution
from densereach.errors import PathologicalTruncationError
from densereach.geometry import HyperRectangle


def unit_box(d):
    return HyperRectangle(np.zeros(d), np.ones(d))


# ------------------------------------------------------------------ uniform


class TestUniform:
    def test_pdf_constant_inside_zero_outside(self):
        dist = InitialDistribution.uniform(
            HyperRectangle([-2.5, -2.5], [2.5, 2.5]))
        assert dist.pdf([0.0, 0.0]) == pytest.approx(1.0 / 25.0)
        assert dist.pdf([2.5, -2.5]) == pytest.approx(1.0 / 25.0)
        assert dist.pdf([2.6, 0.0]) == 0.0

    def test_total_mass_is_one(self):
        dist = InitialDistribution.uniform(HyperRectangle([1.0], [4.0]))
        assert dist.box_mass([-10.0], [10.0]) == pytest.approx(1.0)

    def test_box_mass_is_volume_fraction(self):
        dist = InitialDistribution.uniform(unit_box(2))
        assert dist.box_mass([0.0, 0.0], [0.5, 0.25]) == pytest.approx(0.125)
        assert dist.box_mass([-1.0, 0.0], [0.5, 2.0]) == pytest.approx(0.5)
        assert dist.box_mass([2.0, 2.0], [3.0, 3.0]) == 0.0

    def test_bounds_match_constant_density(self):
        dist = InitialDistribution.uniform(unit_box(3))
        lo, hi = dist.bounds_over_box([0.1, 0.1, 0.1], [0.2, 0.9, 0.5])
        assert lo == pytest.approx(1.0)
        assert hi == pytest.approx(1.0)
        assert dist.bounds_over_box([2.0] * 3, [3.0] * 3) == (0.0, 0.0)

    def test_zero_volume_support_rejected(self):
        with pytest.raises(ValueError):
            InitialDistribution.uniform(HyperRectangle([0.0, 1.0], [1.0, 1.0]))

    def test_sample_mean_matches_center(self):
        dist = InitialDistribution.uniform(unit_box(2))
        pts = dist.sample(10_000, np.random.default_rng(3))
        assert np.allclose(pts.mean(axis=0), [0.5, 0.5], atol=0.02)
        assert np.all(dist.support.contains(pts))


# ----------------------------------------------------------------- gaussian


class TestGaussian:
    def test_normalizer_matches_quadrature(self):
        dist = InitialDistribution.gaussian(
            HyperRectangle([-1.0, 0.0], [2.0, 1.5]), mu=[0.5, 0.2],
            sigma=[1.0, 0.7])
        xs = np.linspace(-1.0, 2.0, 801)
        ys = np.linspace(0.0, 1.5, 801)
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        vals = dist.pdf(grid.reshape(-1, 2)).reshape(801, 801)
        total = simpson(simpson(vals, x=ys, axis=1), x=xs)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_pdf_against_truncnorm_1d(self):
        lo, hi, mu, sigma = -0.5, 2.0, 0.3, 0.8
        dist = InitialDistribution.gaussian(
            HyperRectangle([lo], [hi]), mu=[mu], sigma=sigma)
        ref = stats.truncnorm((lo - mu) / sigma, (hi - mu) / sigma,
                              loc=mu, scale=sigma)
        for x in np.linspace(lo, hi, 17):
            assert dist.pdf([x]) == pytest.approx(ref.pdf(x), rel=1e-10)

    def test_box_mass_against_truncnorm_1d(self):
        lo, hi, mu, sigma = 0.0, 2.0, 1.0, 0.25
        dist = InitialDistribution.gaussian(
            HyperRectangle([lo], [hi]), mu=[mu], sigma=sigma)
        ref = stats.truncnorm((lo - mu) / sigma, (hi - mu) / sigma,
                              loc=mu, scale=sigma)
        for a, b in [(0.0, 0.5), (0.4, 1.3), (1.9, 2.0), (-1.0, 3.0)]:
            assert dist.box_mass([a], [b]) == pytest.approx(
                ref.cdf(b) - ref.cdf(a), rel=1e-10, abs=1e-14)

    def test_box_mass_against_monte_carlo_2d(self, rng):
        dist = InitialDistribution.gaussian(
            HyperRectangle([-1.0, -1.0], [1.0, 1.0]), mu=[0.2, -0.3],
            sigma=[0.6, 0.9])
        pts = dist.sample(200_000, rng)
        lo, hi = np.array([-0.4, -0.8]), np.array([0.7, 0.1])
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        p_hat = inside.mean()
        sem = inside.std() / np.sqrt(len(inside))
        assert abs(dist.box_mass(lo, hi) - p_hat) < 4 * sem + 1e-4

    def test_bounds_cover_dense_grid(self):
        dist = InitialDistribution.gaussian(
            HyperRectangle([-1.0, -1.0], [2.0, 2.0]), mu=[0.4, 1.1],
            sigma=[0.5, 1.3])
        box_lo, box_hi = np.array([0.0, -0.5]), np.array([1.5, 0.9])
        xs = np.linspace(box_lo[0], box_hi[0], 301)
        ys = np.linspace(box_lo[1], box_hi[1], 301)
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        vals = dist.pdf(grid)
        lo, hi = dist.bounds_over_box(box_lo, box_hi)
        assert lo <= vals.min() + 1e-12
        assert hi >= vals.max() - 1e-12
        # extremes are attained on the grid up to discretization
        assert vals.max() == pytest.approx(hi, rel=1e-3)
        assert vals.min() == pytest.approx(lo, rel=1e-3)

    def test_sample_mean_matches_truncnorm_1d(self, rng):
        lo, hi, mu, sigma = 0.0, 1.0, 0.8, 0.5
        dist = InitialDistribution.gaussian(
            HyperRectangle([lo], [hi]), mu=[mu], sigma=sigma)
        ref = stats.truncnorm((lo - mu) / sigma, (hi - mu) / sigma,
                              loc=mu, scale=sigma)
        pts = dist.sample(100_000, rng)
        assert np.all(dist.support.contains(pts))
        assert pts.mean() == pytest.approx(ref.mean(), abs=0.01)

    def test_tiny_sigma_concentrates_at_mu(self):
        dist = InitialDistribution.gaussian(
            unit_box(2), mu=[0.4, 0.6], sigma=1e-4)
        pts = dist.sample(500, np.random.default_rng(11))
        assert np.all(np.abs(pts - [0.4, 0.6]) < 1e-3)

    def test_pathological_truncation_raises(self):
        with pytest.raises(PathologicalTruncationError):
            InitialDistribution.gaussian(unit_box(1), mu=[50.0], sigma=0.5)

    def test_low_acceptance_sampling_raises(self):
        # ~5 sigma from the box in each of two coordinates: the normalizer
        # is positive but rejection acceptance is far below the cutoff.
        dist = InitialDistribution.gaussian(
            unit_box(2), mu=[-6.0, 7.0], sigma=1.2)
        with pytest.raises(PathologicalTruncationError):
            dist.sample(100, np.random.default_rng(0))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            InitialDistribution.gaussian(unit_box(2), mu=[0.5], sigma=1.0)
        with pytest.raises(ValueError):
            InitialDistribution.gaussian(unit_box(2), mu=[0.5, 0.5], sigma=0.0)


# ------------------------------------------------------------------- shared


class TestSharedBehavior:
    def test_sampling_is_deterministic(self):
        dist = InitialDistribution.gaussian(
            unit_box(3), mu=[0.5, 0.5, 0.5], sigma=0.4)
        a = dist.sample(257, np.random.default_rng(42))
        b = dist.sample(257, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_round_trip_serialization(self):
        for dist in (
            InitialDistribution.uniform(HyperRectangle([-1.0, 2.0], [3.0, 4.0])),
            InitialDistribution.gaussian(unit_box(2), mu=[0.2, 0.9], sigma=0.3),
        ):
            clone = InitialDistribution.from_dict(dist.to_dict())
            assert clone.kind == dist.kind
            assert np.array_equal(clone.support.lo, dist.support.lo)
            assert clone.normalizer == pytest.approx(dist.normalizer, rel=1e-12)
            x = np.full(dist.d, 0.4)
            assert clone.pdf(x) == pytest.approx(dist.pdf(x), rel=1e-12)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            InitialDistribution.from_dict(
                {"kind": "cauchy", "lo": [0.0], "hi": [1.0]})

    @settings(max_examples=25, deadline=None)
    @given(data=st.data())
    def test_bounds_dominate_sampled_densities(self, data):
        mu = data.draw(st.tuples(
            st.floats(-1.0, 2.0), st.floats(-1.0, 2.0)))
        sigma = data.draw(st.floats(0.2, 2.0))
        a = data.draw(st.tuples(st.floats(-0.9, 0.8), st.floats(-0.9, 0.8)))
        width = data.draw(st.floats(0.05, 1.5))
        dist = InitialDistribution.gaussian(
            HyperRectangle([-1.0, -1.0], [1.0, 1.0]), mu=list(mu), sigma=sigma)
        lo_b = np.array(a)
        hi_b = np.minimum(lo_b + width, 1.0)
        lo, hi = dist.bounds_over_box(lo_b, hi_b)
        rng = np.random.default_rng(7)
        pts = rng.uniform(lo_b, hi_b, size=(128, 2))
        vals = dist.pdf(pts)
        assert np.all(vals <= hi + 1e-12)
        assert np.all(vals >= lo - 1e-12)
