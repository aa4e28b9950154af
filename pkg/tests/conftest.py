import numpy as np
import pytest

from aerialseg.synth import SceneSpec, generate_scene


def brute_knn(points, query, k):
    """Indices of the k nearest points ordered by (distance, index)."""
    d = points - np.asarray(query, dtype=np.float64)
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    return np.lexsort((np.arange(len(points)), d2))[:k]


def brute_radius(points, query, r):
    d = points - np.asarray(query, dtype=np.float64)
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    return np.flatnonzero(d2 <= r * r)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene_tile():
    spec = SceneSpec(extent=(60, 60), target_density=6.0, seed=7)
    return generate_scene(spec, "Small", ["medium"])


TINY_BENCHMARK = {
    "seed": 5,
    "defaults": {"building_count": [1, 2], "tree_count": [2, 3]},
    "datasets": [
        {"dataset_id": "Train", "role": "train", "sensor_kind": "lidar",
         "tiles": [{"subset_tags": [], "count": 1, "scene": {"extent": [40, 40], "target_density": 8}}]},
        {"dataset_id": "TestL", "role": "test", "sensor_kind": "lidar",
         "tiles": [{"subset_tags": [], "scene": {"extent": [50, 50], "target_density": 1.5}},
                   {"subset_tags": [], "scene": {"extent": [30, 30], "target_density": 8}}]},
        {"dataset_id": "TestP", "role": "test", "sensor_kind": "photogrammetry",
         "tiles": [{"subset_tags": [], "scene": {"extent": [30, 30], "target_density": 6}}]},
    ],
}


@pytest.fixture(scope="session")
def tiny_bench(tmp_path_factory):
    """A seconds-scale benchmark: one training set, two test sets."""
    from aerialseg.synth import generate_benchmark

    out = tmp_path_factory.mktemp("tiny")
    paths = generate_benchmark(TINY_BENCHMARK, out)
    return out, paths
