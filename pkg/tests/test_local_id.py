import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_rotation
from repdim.data import PointCloud, generate_hypercube, generate_swiss_roll
from repdim.errors import DegenerateDataError, EstimationError
from repdim.local_id import estimate_local_id, fit_ratio_scaling, nn_ratios
from repdim.neighbors import NeighborTable, knn


class TestRatios:
    def test_simple_ratio(self):
        t = NeighborTable(2, np.array([[1, 2]]), np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(nn_ratios(t), [2.0])

    def test_duplicate_dropped(self):
        t = NeighborTable(2, np.array([[1, 2], [0, 2]]), np.array([[0.0, 3.0], [1.0, 1.5]]))
        r, dropped = nn_ratios(t, return_dropped=True)
        np.testing.assert_array_equal(r, [1.5])
        assert dropped == 1

    def test_all_duplicates(self):
        t = NeighborTable(2, np.array([[1, 2], [0, 2]]), np.array([[0.0, 3.0], [0.0, 1.5]]))
        with pytest.raises(EstimationError, match="no usable ratios"):
            nn_ratios(t)

    def test_uniform_line_pareto_law(self):
        # in one dimension the ratio CDF is 1 - 1/rho
        c = PointCloud(np.random.default_rng(0).random((10_000, 1)))
        r = np.sort(nn_ratios(knn(c, 2)))
        ecdf_hi = np.arange(1, len(r) + 1) / len(r)
        ecdf_lo = np.arange(len(r)) / len(r)
        F = 1 - 1 / r
        gap = max(np.max(np.abs(ecdf_hi - F)), np.max(np.abs(ecdf_lo - F)))
        assert gap < 0.03


class TestFit:
    def test_hand_computed_slope(self):
        slope, _, _, _ = fit_ratio_scaling([4.0, 2.0], discard_fraction=0.0)
        expected = (math.log(2) * -math.log(2 / 3) + math.log(4) * -math.log(1 / 3)) / (
            math.log(2) ** 2 + math.log(4) ** 2
        )
        assert slope == pytest.approx(expected, rel=1e-12)
        assert slope == pytest.approx(0.7510, abs=1e-4)

    def test_discard_drops_top(self):
        _, _, x, _ = fit_ratio_scaling(np.linspace(1.1, 3.0, 100), 0.1)
        assert len(x) == 90

    def test_all_ones_degenerate(self):
        with pytest.raises(DegenerateDataError):
            fit_ratio_scaling(np.ones(50), 0.1)


class TestEstimate:
    def test_segment(self):
        e = estimate_local_id(generate_hypercube(2000, 1, 3))
        assert 0.9 <= e.dimension <= 1.1

    def test_square(self):
        e = estimate_local_id(generate_hypercube(2000, 2, 1))
        assert 1.8 <= e.dimension <= 2.2
        assert e.ci_low <= e.dimension <= e.ci_high
        assert e.method == "local" and e.n_used == 2000

    def test_flat_roll(self):
        e = estimate_local_id(generate_swiss_roll(4000, 0.0, 2))
        assert 1.7 <= e.dimension <= 2.3

    def test_too_few_points(self):
        with pytest.raises(EstimationError):
            estimate_local_id(generate_hypercube(15, 2, 0))
        with pytest.raises(EstimationError):
            estimate_local_id(PointCloud(np.repeat(np.eye(3), 10, axis=0)))

    def test_monotone_recovery(self):
        est = [estimate_local_id(generate_hypercube(5000, d, 10 + d)).dimension for d in range(1, 6)]
        assert all(a < b for a, b in zip(est, est[1:]))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 1000), scale=st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, scale):
        c = generate_hypercube(300, 3, seed)
        a = estimate_local_id(c)
        # a power of two scales every coordinate exactly
        b = estimate_local_id(PointCloud(c.points * 4.0))
        assert a.dimension == b.dimension
        d = estimate_local_id(PointCloud(c.points * scale))
        assert d.dimension == pytest.approx(a.dimension, rel=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_isometry_invariance(self, seed):
        rng = np.random.default_rng(seed)
        c = generate_hypercube(800, 3, seed)
        moved = c.points @ random_rotation(3, rng).T + rng.standard_normal(3)
        assert abs(estimate_local_id(PointCloud(moved)).dimension - estimate_local_id(c).dimension) < 1e-9

    def test_zero_padding_exact(self):
        c = generate_hypercube(600, 2, 5)
        padded = PointCloud(np.hstack([c.points, np.zeros((600, 5))]))
        assert estimate_local_id(padded).dimension == estimate_local_id(c).dimension
