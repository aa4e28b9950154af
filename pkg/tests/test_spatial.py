import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aerialseg.errors import SpatialError
from aerialseg.spatial import KdTree, squared_distances

from conftest import brute_knn, brute_radius


def _clouds(rng):
    yield rng.normal(size=(500, 3))
    yield rng.integers(0, 5, size=(400, 3)).astype(float)  # heavy ties
    yield np.repeat(rng.normal(size=(3, 3)), 40, axis=0)  # duplicates
    yield np.column_stack([rng.uniform(0, 50, 300), rng.uniform(0, 50, 300), np.zeros(300)])


class TestConstruction:
    def test_rejects_bad_input(self):
        with pytest.raises(SpatialError):
            KdTree(np.zeros((0, 3)))
        with pytest.raises(SpatialError):
            KdTree(np.zeros((4, 2)))
        with pytest.raises(SpatialError, match="non-finite"):
            KdTree(np.array([[0, 0, 0], [np.nan, 0, 0]], dtype=float))

    def test_leaves_partition_points(self, rng):
        tree = KdTree(rng.normal(size=(1000, 3)), leaf_size=8)
        owned = np.concatenate([tree.leaf_indices(n) for n in tree.leaves])
        assert np.array_equal(np.sort(owned), np.arange(1000))
        assert all(tree.end[n] - tree.start[n] <= 8 for n in tree.leaves)

    def test_build_is_deterministic(self, rng):
        pts = rng.integers(0, 4, size=(700, 3)).astype(float)
        assert KdTree(pts).same_as(KdTree(pts.copy()))

    def test_arrays_are_read_only(self, rng):
        tree = KdTree(rng.normal(size=(50, 3)))
        with pytest.raises(ValueError):
            tree.points[0, 0] = 1.0


class TestQueries:
    def test_knn_matches_brute_force(self, rng):
        for pts in _clouds(rng):
            tree = KdTree(pts, leaf_size=16)
            for _ in range(20):
                q = pts[rng.integers(len(pts))] + rng.normal(scale=0.3, size=3) * rng.integers(0, 2)
                k = int(rng.integers(1, len(pts) + 1))
                assert np.array_equal(tree.knn(q, k), brute_knn(pts, q, k))

    def test_knn_returns_sorted_distances(self, rng):
        pts = rng.normal(size=(300, 3))
        idx, dist = KdTree(pts).knn(np.zeros(3), 25, return_distance=True)
        assert np.all(np.diff(dist) >= 0)
        np.testing.assert_allclose(dist, np.linalg.norm(pts[idx], axis=1), rtol=1e-12)

    def test_radius_matches_brute_force(self, rng):
        for pts in _clouds(rng):
            tree = KdTree(pts)
            for r in (0.0, 0.5, 1.0, 2.0, 100.0):
                q = pts[rng.integers(len(pts))]
                assert np.array_equal(tree.radius_query(q, r), brute_radius(pts, q, r))

    def test_radius_boundary_is_inclusive(self):
        pts = np.array([[0, 0, 0], [3, 4, 0], [3, 4, 0.001]], dtype=float)
        assert list(KdTree(pts).radius_query([0, 0, 0], 5.0)) == [0, 1]

    def test_knn_many_matches_single(self, rng):
        for pts in _clouds(rng):
            tree = KdTree(pts, leaf_size=12)
            queries = np.vstack([pts[rng.choice(len(pts), 30, replace=False)], rng.normal(size=(10, 3))])
            k = min(16, len(pts))
            idx, dist = tree.knn_many(queries, k)
            for row, q in enumerate(queries):
                assert np.array_equal(idx[row], brute_knn(pts, q, k))
            np.testing.assert_allclose(dist, np.linalg.norm(pts[idx] - queries[:, None, :], axis=2), rtol=1e-12)

    def test_query_groups_cover_every_ball(self, rng):
        pts = rng.uniform(0, 20, size=(2000, 3))
        tree = KdTree(pts)
        queries = pts[rng.choice(2000, 60, replace=False)]
        seen = np.zeros(60, dtype=bool)
        for group, cand, d2 in tree.query_groups(queries, 1.5):
            assert np.all(np.diff(cand) > 0)
            for row, qi in enumerate(group):
                seen[qi] = True
                assert np.array_equal(cand[d2[row] <= 1.5 ** 2], brute_radius(pts, queries[qi], 1.5))
        assert seen.all()

    def test_squared_distances(self):
        pts = np.array([[1.0, 2.0, 2.0], [0.0, 0.0, 0.0]])
        assert list(squared_distances(pts, np.zeros(3))) == [9.0, 0.0]

    def test_invalid_arguments(self, rng):
        tree = KdTree(rng.normal(size=(10, 3)))
        with pytest.raises(SpatialError):
            tree.knn(np.zeros(3), 0)
        with pytest.raises(SpatialError):
            tree.knn(np.zeros(3), 11)
        with pytest.raises(SpatialError):
            tree.radius_query(np.zeros(3), -1.0)


coords = st.floats(-100, 100, allow_nan=False, width=32)


@settings(max_examples=60, deadline=None)
@given(pts=arrays(np.float64, st.tuples(st.integers(1, 120), st.just(3)), elements=coords),
       q=arrays(np.float64, 3, elements=coords), k=st.integers(1, 200), r=st.floats(0, 150))
def test_property_exact_against_scan(pts, q, k, r):
    tree = KdTree(pts, leaf_size=4)
    k = min(k, len(pts))
    assert np.array_equal(tree.knn(q, k), brute_knn(pts, q, k))
    assert np.array_equal(tree.radius_query(q, r), brute_radius(pts, q, r))
