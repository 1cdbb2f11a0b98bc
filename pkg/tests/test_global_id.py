import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_rotation
from repdim.data import PointCloud, generate_hypersphere, generate_swiss_roll
from repdim.errors import DegenerateDataError, EstimationError, UsageError
from repdim.global_id import (
    distance_distribution,
    estimate_global_id,
    histogram_of,
    hypersphere_reference,
    hypersphere_reference_points,
    mismatch_profile,
    rice_bins,
)
from repdim.neighbors import GeodesicDistances


class TestDistanceDistribution:
    def test_hand_count(self):
        h = histogram_of([1.0, 2.0, 2.0, 3.0])
        top = int(np.argmax(h.densities))
        assert h.bin_edges[top] <= 2.0 <= h.bin_edges[top + 1]

    def test_rice_rule(self):
        assert rice_bins(1000) == 20
        assert rice_bins(1001) == 21
        x = np.random.default_rng(0).random(5000)
        assert len(distance_distribution(x).densities) == rice_bins(5000)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), m=st.integers(100, 3000))
    def test_normalised(self, seed, m):
        x = np.random.default_rng(seed).gamma(2.0, size=m)
        h = distance_distribution(x)
        assert abs(np.sum(h.densities * np.diff(h.bin_edges)) - 1) < 1e-9
        assert x.min() <= h.mode <= x.max()
        assert h.spread == pytest.approx(np.std(x, ddof=1))

    def test_all_equal(self):
        h = distance_distribution(np.full(200, 3.0))
        assert np.count_nonzero(h.densities) == 1 and h.spread == 0
        with pytest.raises(DegenerateDataError):
            mismatch_profile(h, [])

    def test_mode_tie_smaller(self):
        x = np.r_[np.zeros(60), np.ones(60)]
        h = histogram_of(x, bins=2)
        assert h.mode == 0.25

    def test_near_tie_goes_to_smaller(self):
        # counts 98 vs 100: within 5% of the max, so the first bin wins
        x = np.r_[np.zeros(98), np.ones(100)]
        assert histogram_of(x, bins=2).mode == 0.25
        assert histogram_of(x, bins=2, mode_tolerance=0.0).mode == 0.75

    def test_flat_law_mode_low(self):
        x = np.random.default_rng(3).uniform(0, 1, 200_000)
        h = histogram_of(x, bins=20)
        assert h.mode == h.centers[0]

    def test_too_few(self):
        with pytest.raises(EstimationError, match="connected"):
            distance_distribution(np.r_[np.ones(50), np.full(50, np.nan)])

    def test_geodesic_input_upper_triangle(self):
        v = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, np.nan], [2.0, np.nan, 0.0]])
        geo = GeodesicDistances(np.arange(3), v, np.isfinite(v))
        with pytest.raises(EstimationError, match="only 2 finite"):
            distance_distribution(geo)


class TestReference:
    def test_circle_chord_density(self):
        # chord length on S^1 has density 1 / (pi sqrt(1 - r^2/4))
        ref = hypersphere_reference(1, 3000, seed=1)
        c, dens = ref.histogram.centers, ref.histogram.densities
        assert np.argmax(dens) == len(dens) - 1
        w = np.diff(ref.histogram.bin_edges)
        lo, hi = ref.histogram.bin_edges[:-1], ref.histogram.bin_edges[1:]
        cdf = lambda r: 2 / np.pi * np.arcsin(np.minimum(r, 2) / 2)
        expected = (cdf(hi) - cdf(lo)) / w
        inner = c < 1.8
        np.testing.assert_allclose(dens[inner], expected[inner], rtol=0.05)

    def test_mean_tends_to_sqrt2(self):
        means = []
        for d in (1, 3, 10, 40):
            h = hypersphere_reference(d, 1500).histogram
            means.append(np.sum(h.centers * h.densities * np.diff(h.bin_edges)))
        assert all(abs(b - np.sqrt(2)) < abs(a - np.sqrt(2)) for a, b in zip(means, means[1:]))
        assert abs(means[-1] - np.sqrt(2)) < 0.02

    def test_deterministic(self):
        a = hypersphere_reference(3, 800, seed=5)
        from repdim.global_id import clear_reference_cache

        clear_reference_cache()
        b = hypersphere_reference(3, 800, seed=5)
        assert a is not b
        np.testing.assert_array_equal(a.histogram.densities, b.histogram.densities)

    def test_graph_reference_disk_cache(self, tmp_path):
        from repdim.global_id import clear_reference_cache

        a = hypersphere_reference(2, 500, metric="graph", n_sources=50, cache_dir=tmp_path)
        clear_reference_cache()
        b = hypersphere_reference(2, 500, metric="graph", n_sources=50, cache_dir=tmp_path)
        assert len(list(tmp_path.iterdir())) == 1
        np.testing.assert_array_equal(a.histogram.densities, b.histogram.densities)

    def test_bad_args(self):
        with pytest.raises(UsageError):
            hypersphere_reference(0)
        with pytest.raises(UsageError):
            hypersphere_reference(2, 100, metric="ball")


class TestEstimate:
    @pytest.mark.parametrize("d", [1, 2])
    def test_low_dim_spheres(self, d):
        e = estimate_global_id(generate_hypersphere(1500, d, 7), d_max=8)
        assert e.dimension == d
        assert e.ci_low <= e.dimension <= e.ci_high
        assert len(e.diagnostics["errors"]) == 8

    def test_flat_roll(self):
        e = estimate_global_id(generate_swiss_roll(2000, 0.0, 1), d_max=6)
        assert e.dimension == 2

    def test_self_consistency_on_reference_sample(self):
        pts = hypersphere_reference_points(2, 1500)
        assert estimate_global_id(pts, d_max=6).dimension == 2

    def test_zero_padding_exact(self):
        c = generate_hypersphere(600, 2, 3)
        a = estimate_global_id(c, d_max=5)
        b = estimate_global_id(PointCloud(np.hstack([c.points, np.zeros((600, 4))])), d_max=5)
        np.testing.assert_array_equal(a.diagnostics["errors"], b.diagnostics["errors"])

    def test_isometry(self):
        rng = np.random.default_rng(2)
        c = generate_hypersphere(600, 2, 4)
        moved = PointCloud(c.points @ random_rotation(3, rng).T + 5.0)
        a = estimate_global_id(c, d_max=5).diagnostics["errors"]
        b = estimate_global_id(moved, d_max=5).diagnostics["errors"]
        assert np.max(np.abs(a - b)) < 1e-9

    @pytest.mark.parametrize("scale", [1e-3, 0.37, 4.0, 250.0])
    def test_scale(self, scale):
        c = generate_hypersphere(600, 2, 4)
        a = estimate_global_id(c, d_max=5)
        b = estimate_global_id(PointCloud(c.points * scale), d_max=5)
        assert a.dimension == b.dimension

    def test_disconnected_majority(self):
        rng = np.random.default_rng(0)
        # 40 far-apart clumps of 5: the largest component holds few points
        pts = np.repeat(rng.standard_normal((40, 3)) * 100, 5, axis=0) + rng.standard_normal((200, 3)) * 1e-3
        with pytest.raises(EstimationError, match="largest graph component"):
            estimate_global_id(PointCloud(pts), k=4)

    def test_minor_disconnection_recorded(self):
        c = generate_hypersphere(500, 1, 0)
        # a clump larger than k never links back to the circle
        far = np.random.default_rng(1).standard_normal((30, 2)) * 0.01 + 50
        e = estimate_global_id(PointCloud(np.vstack([c.points, far])), d_max=3)
        assert e.n_used == 500
        assert e.diagnostics["discarded_fraction"] == pytest.approx(30 / 530)

    def test_usage(self):
        c = generate_hypersphere(200, 1, 0)
        with pytest.raises(UsageError):
            estimate_global_id(c, k=200)
        with pytest.raises(UsageError):
            estimate_global_id(c, d_min=3, d_max=2)
        with pytest.raises(EstimationError):
            estimate_global_id(generate_hypersphere(50, 1, 0))
