"""Tests for Baseline Localization Service"""

import math

import numpy as np
import pytest

from shapely.geometry import MultiPoint, Point

from src.models.sensing import CoordFingerprintDatabase
from src.services.baseline_service import knn_locate, nlst_locate
from src.services.landmark_service import nearest_indices
from src.utils.errors import DegenerateGeometryError

SQUARE = {"A": (0.0, 0.0), "B": (10.0, 0.0), "C": (10.0, 10.0), "D": (0.0, 10.0)}


def exact_ranges(point, anchors):
    return {a: math.hypot(point[0] - x, point[1] - y) for a, (x, y) in anchors.items()}


class TestNlstLocate:
    """Nonlinear least-squares trilateration"""

    @pytest.mark.parametrize("point", [(3.0, 7.0), (8.5, 1.5), (5.0, 5.0), (0.5, 9.0)])
    def test_exact_ranges(self, point):
        """Exact ranges recover the position to 1 um"""
        result = nlst_locate(exact_ranges(point, SQUARE), SQUARE)
        assert result.converged
        assert np.hypot(result.position[0] - point[0], result.position[1] - point[1]) <= 1e-6

    def test_three_anchors(self):
        """Three non-collinear anchors suffice"""
        anchors = {"A": (0.0, 0.0), "B": (8.0, 1.0), "C": (3.0, 9.0)}
        result = nlst_locate(exact_ranges((4.0, 3.0), anchors), anchors)
        assert result.position == pytest.approx((4.0, 3.0), abs=1e-6)

    def test_equilateral_centroid(self):
        """Equal ranges in an equilateral triangle give the centroid"""
        anchors = {"A": (0.0, 0.0), "B": (6.0, 0.0), "C": (3.0, 3.0 * math.sqrt(3))}
        centroid = (3.0, math.sqrt(3))
        ranges = {a: 2 * math.sqrt(3) for a in anchors}
        result = nlst_locate(ranges, anchors)
        assert result.position == pytest.approx(centroid, abs=1e-6)

    def test_perturbed_ranges(self):
        """A 10 cm range bias moves the fix by at most 20 cm"""
        truth = (4.0, 6.0)
        ranges = {a: d + 0.1 for a, d in exact_ranges(truth, SQUARE).items()}
        result = nlst_locate(ranges, SQUARE)
        assert np.hypot(result.position[0] - truth[0], result.position[1] - truth[1]) <= 0.2

    def test_initial_guess(self):
        """A far initial guess still converges"""
        result = nlst_locate(exact_ranges((2.0, 2.0), SQUARE), SQUARE, initial=(9.0, 9.0))
        assert result.position == pytest.approx((2.0, 2.0), abs=1e-6)

    def test_too_few_anchors(self):
        """Two anchors cannot be trilaterated"""
        anchors = {"A": (0.0, 0.0), "B": (10.0, 0.0)}
        with pytest.raises(DegenerateGeometryError, match="degenerate geometry"):
            nlst_locate(exact_ranges((3.0, 3.0), anchors), anchors)

    def test_collinear_anchors(self):
        """Collinear anchors are degenerate"""
        anchors = {"A": (0.0, 0.0), "B": (5.0, 0.0), "C": (10.0, 0.0)}
        with pytest.raises(DegenerateGeometryError, match="degenerate geometry"):
            nlst_locate({"A": 3.0, "B": 3.0, "C": 8.0}, anchors)

    def test_ranges_for_unknown_anchors_ignored(self):
        """Ranges to anchors without position are dropped"""
        ranges = exact_ranges((3.0, 4.0), SQUARE)
        ranges["hidden"] = 50.0
        result = nlst_locate(ranges, SQUARE)
        assert result.position == pytest.approx((3.0, 4.0), abs=1e-6)


    @pytest.mark.parametrize("seed", range(5))
    def test_residual_never_above_start(self, seed):
        """Accepted steps only lower the residual below the starting one"""
        rng = np.random.default_rng(seed)
        truth = rng.uniform(0, 10, 2)
        ranges = {a: d + rng.normal(0, 1.0) for a, d in exact_ranges(truth, SQUARE).items()}
        start = np.array(list(SQUARE.values())).mean(axis=0)
        initial = sum((math.hypot(start[0] - x, start[1] - y) - ranges[a]) ** 2 for a, (x, y) in SQUARE.items())
        assert nlst_locate(ranges, SQUARE).residual <= initial + 1e-12

    @pytest.mark.parametrize("shift", [(5.0, -3.0), (-120.0, 40.0)])
    def test_translation_moves_fix(self, shift):
        """Shifting every anchor shifts the fix by the same offset"""
        rng = np.random.default_rng(8)
        ranges = {a: d + rng.normal(0, 0.3) for a, d in exact_ranges((3.0, 6.0), SQUARE).items()}
        moved = {a: (x + shift[0], y + shift[1]) for a, (x, y) in SQUARE.items()}
        base = nlst_locate(ranges, SQUARE).position
        shifted = nlst_locate(ranges, moved).position
        assert shifted == pytest.approx((base[0] + shift[0], base[1] + shift[1]), abs=1e-6)


class TestKnnLocate:
    """Coordinate KNN fingerprinting"""

    @pytest.fixture
    def db(self):
        features = np.array([
            [-40.0, -80.0, 0.0, 0.0],
            [-80.0, -40.0, 0.0, 0.0],
            [-60.0, -60.0, 0.0, 0.0],
        ])
        coords = np.array([[0.0, 0.0], [2.0, 2.0], [9.0, 9.0]])
        return CoordFingerprintDatabase(ap_list=["a", "b"], features=features, coords=coords)

    def test_k1_exact(self, db):
        """k=1 returns the matching survey point"""
        assert knn_locate(db, db.features[2], k=1) == (9.0, 9.0)

    def test_k2_mean(self, db):
        """Estimate is the unweighted mean of the k neighbours"""
        query = np.array([-60.0, -60.0, 0.0, 0.0])
        nearest_two = knn_locate(db.model_copy(update={
            "features": db.features[:2], "coords": db.coords[:2]}), query, k=2)
        assert nearest_two == (1.0, 1.0)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_estimate_inside_neighbour_hull(self, k):
        """The estimate lies in the convex hull of its k neighbours' coordinates"""
        rng = np.random.default_rng(k)
        db = CoordFingerprintDatabase(ap_list=["a", "b", "c"], features=rng.uniform(-90, -30, (40, 5)),
                                      coords=rng.uniform(0, 20, (40, 2)))
        query = rng.uniform(-90, -30, 5)
        estimate = knn_locate(db, query, k=k)
        hull = MultiPoint([tuple(c) for c in db.coords[nearest_indices(db.features, query, k)]]).convex_hull
        assert hull.buffer(1e-9).contains(Point(estimate))

    def test_k_out_of_range(self, db):
        """k above the database size is rejected"""
        with pytest.raises(ValueError):
            knn_locate(db, db.features[0], k=4)

    def test_width_mismatch(self, db):
        """Queries of the wrong width are rejected"""
        with pytest.raises(ValueError, match="width"):
            knn_locate(db, np.zeros(3), k=1)
