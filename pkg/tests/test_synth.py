import json

import numpy as np
import pytest

from aerialseg.errors import AerialSegError
from aerialseg.synth import (
    SceneSpec,
    default_benchmark_config,
    density_band,
    generate_benchmark,
    generate_scene,
    generate_scene_objects,
)
from aerialseg.taxonomy import SensorKind, UnifiedClass
from aerialseg.tilestore import compute_overhead_density, load_manifest, read_tile


def bare(**kw):
    return SceneSpec(building_count=(0, 0), tree_count=(0, 0), clutter_fraction=0.0, **kw)


def interior_depth(scene):
    """Lower bound on how far each Vegetation point sits inside its canopy ellipsoid.

    For a convex body centred on the origin, a point at normalised radius rho
    is at least (1 - rho) * (smallest semi-axis) from the surface.
    """
    veg = scene.tile.positions[scene.tile.unified_labels == UnifiedClass.VEGETATION]
    depth = np.full(len(veg), -np.inf)
    for t in scene.trees:
        rho = np.sqrt(((veg[:, 0] - t.cx) / t.a) ** 2 + ((veg[:, 1] - t.cy) / t.b) ** 2
                      + ((veg[:, 2] - t.cz) / t.c) ** 2)
        depth = np.maximum(depth, (1 - rho) * min(t.a, t.b, t.c))
    return depth


class TestScene:
    def test_flat_unit_density(self):
        tile = generate_scene(bare(extent=(100, 100), target_density=1.0, terrain_amplitude=0, seed=5))
        assert abs(len(tile) - 10_000) < 300
        assert set(tile.unified_labels.tolist()) == {UnifiedClass.GROUND}
        assert tile.overhead_density == pytest.approx(1.0, rel=0.05)
        assert compute_overhead_density(tile.positions) == tile.overhead_density

    @pytest.mark.parametrize("density", [1.75, 8.0, 65.343])
    def test_density_targets(self, density):
        tile = generate_scene(SceneSpec(extent=(40, 40), target_density=density, seed=2))
        assert tile.overhead_density == pytest.approx(density, rel=0.05)

    def test_deterministic(self):
        spec = SceneSpec(extent=(50, 30), target_density=4, sensor_style="photogrammetry", seed=99)
        a, b = generate_scene(spec, "X", ["t"]), generate_scene(spec, "X", ["t"])
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.unified_labels.tobytes() == b.unified_labels.tobytes()
        assert not np.array_equal(a.positions, generate_scene(SceneSpec(extent=(50, 30), target_density=4,
                                                                      seed=100)).positions)

    def test_all_classes_present(self, small_scene_tile):
        counts = np.bincount(small_scene_tile.unified_labels, minlength=4)
        assert (counts > 0).all()
        assert small_scene_tile.dataset_id == "Small"

    def test_photogrammetry_vegetation_is_a_shell(self):
        spec = SceneSpec(extent=(80, 80), target_density=10, sensor_style="photogrammetry", noise_sigma=0.0, seed=4)
        scene = generate_scene_objects(spec)
        assert scene.trees
        depth = interior_depth(scene)
        assert len(depth) > 1000
        assert depth.max() <= 1e-9

    def test_photogrammetry_shell_with_noise(self):
        sigma = 0.03
        depths = []
        for seed in range(4):
            spec = SceneSpec(extent=(80, 80), target_density=10, sensor_style="photogrammetry",
                             noise_sigma=sigma, seed=seed)
            depths.append(interior_depth(generate_scene_objects(spec)))
        depth = np.concatenate(depths)
        # Only the Gaussian tail (about 0.13% one-sided) may reach past 3 sigma.
        assert np.mean(depth > 3 * sigma) < 0.005
        assert depth.max() < 6 * sigma

    def test_lidar_vegetation_fills_volume(self):
        scene = generate_scene_objects(SceneSpec(extent=(80, 80), target_density=10, seed=4))
        assert np.mean(interior_depth(scene) > 0.5) > 0.3

    def test_empty_spec(self):
        with pytest.raises(AerialSegError, match="target_density"):
            generate_scene(SceneSpec(extent=(1, 1), target_density=0.0))
        with pytest.raises(AerialSegError, match="no points"):
            generate_scene(SceneSpec(extent=(1, 1), target_density=1e-12))

    def test_density_band(self):
        assert density_band(1.75) == "sparse"
        assert density_band(65.343) == "medium"
        assert density_band(3.0) is None
        assert density_band(400) == "dense"


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    return out, generate_benchmark(default_benchmark_config(), out)


class TestBenchmark:
    def test_structure(self, bench):
        _, paths = bench
        assert len(paths["train"]) == 2 and len(paths["validation"]) == 1
        subsets = set()
        kinds = set()
        for path in paths["test"]:
            m = load_manifest(path)
            m.validate()
            kinds.add(m.sensor_kind)
            subsets |= {(m.dataset_id, s) for s in m.subsets}
        assert len(subsets) >= 4
        assert kinds == {SensorKind.LIDAR, SensorKind.PHOTOGRAMMETRY}
        assert {"sparse", "medium"} <= {s for _, s in subsets}
        for path in paths["train"] + paths["validation"]:
            load_manifest(path).validate()

    def test_band_tags_match_density(self, bench):
        _, paths = bench
        for path in paths["test"]:
            m = load_manifest(path)
            for i, entry in enumerate(m.tiles):
                tile = read_tile(m.tile_path(i))
                band = density_band(tile.overhead_density)
                assert band in entry.subset_tags

    def test_train_is_medium_lidar(self, bench):
        _, paths = bench
        for path in paths["train"]:
            m = load_manifest(path)
            assert m.sensor_kind == SensorKind.LIDAR
            assert set(m.subsets) == {"medium"}

    def test_regeneration_is_byte_identical(self, bench, tmp_path):
        out, _ = bench
        generate_benchmark(default_benchmark_config(), tmp_path)
        for f in sorted(out.rglob("*.apct")):
            assert (tmp_path / f.relative_to(out)).read_bytes() == f.read_bytes()

    def test_empty_config(self, tmp_path):
        with pytest.raises(AerialSegError):
            generate_benchmark({}, tmp_path)
        with pytest.raises(AerialSegError):
            generate_benchmark({"datasets": []}, tmp_path)

    def test_duplicate_dataset(self, tmp_path):
        cfg = default_benchmark_config()
        cfg["datasets"] = [cfg["datasets"][0], cfg["datasets"][0]]
        with pytest.raises(AerialSegError, match="duplicate"):
            generate_benchmark(cfg, tmp_path)

    def test_config_is_json(self):
        assert json.loads(json.dumps(default_benchmark_config()))["seed"] == 42
