"""Labelled synthetic aerial scenes and benchmark suites.

Scenes are a heightfield of Ground with box-shaped buildings (roof and
facade points) and ellipsoidal tree canopies. LiDAR-like scenes fill the
canopy volume and let some returns reach the ground below it;
photogrammetry-like scenes only reconstruct the canopy's upper shell.

Points are laid out per 1 m x 1 m cell, each cell receiving ``floor(d)`` or
``ceil(d)`` points, so the grid-occupancy overhead density matches the
requested density for d >= 1.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from aerialseg.errors import AerialSegError, ManifestError
from aerialseg.sampling.schedule import derive_rng, stable_key
from aerialseg.taxonomy import SensorKind, UnifiedClass
from aerialseg.tilestore.manifest import DatasetManifest, Role, TileEntry, save_manifest
from aerialseg.tilestore.tile import Tile, write_tile

logger = logging.getLogger(__name__)

LIDAR_LIKE = "lidar"
PHOTOGRAMMETRY_LIKE = "photogrammetry"

# Overhead density bands in pts/m²; values between bands get no band tag.
DENSITY_BANDS = (("sparse", 0.0, 2.0), ("medium", 5.0, 100.0), ("dense", 100.0, math.inf))


def density_band(density: float) -> str | None:
    for name, lo, hi in DENSITY_BANDS:
        if lo < density < hi:
            return name
    return None


@dataclass(frozen=True)
class SceneSpec:
    extent: tuple = (100.0, 100.0)
    target_density: float = 10.0
    sensor_style: str = LIDAR_LIKE
    terrain_amplitude: float = 2.0
    terrain_slope: float = 0.02
    building_count: tuple = (3, 6)
    building_size: tuple = (8.0, 16.0)
    building_height: tuple = (6.0, 20.0)
    facade_fraction: float = 0.5  # share of points in the wall band moved onto the wall
    tree_count: tuple = (6, 12)
    tree_radius: tuple = (2.5, 5.0)
    tree_height: tuple = (6.0, 14.0)  # canopy top above ground
    canopy_fraction: float = 0.8  # LiDAR returns from the canopy (rest reach the ground)
    clutter_fraction: float = 0.01
    noise_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self):
        ext = tuple(float(v) for v in self.extent)
        if len(ext) != 2 or min(ext) <= 0:
            raise AerialSegError(f"extent must be two positive lengths, got {self.extent}")
        object.__setattr__(self, "extent", ext)
        if not self.target_density > 0:
            raise AerialSegError("target_density must be > 0")
        if self.sensor_style not in (LIDAR_LIKE, PHOTOGRAMMETRY_LIKE):
            raise AerialSegError(f"unknown sensor_style {self.sensor_style!r}")
        for name in ("facade_fraction", "canopy_fraction", "clutter_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise AerialSegError(f"{name} must be in [0, 1]")
        for name in ("building_count", "building_size", "building_height",
                     "tree_count", "tree_radius", "tree_height"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise AerialSegError(f"{name} must be an increasing non-negative range")
            object.__setattr__(self, name, (lo, hi))
        if self.noise_sigma < 0 or self.terrain_amplitude < 0:
            raise AerialSegError("noise_sigma and terrain_amplitude must be >= 0")

    @property
    def sensor_kind(self) -> SensorKind:
        return SensorKind.LIDAR if self.sensor_style == LIDAR_LIKE else SensorKind.PHOTOGRAMMETRY

    @classmethod
    def from_json(cls, doc: dict) -> "SceneSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise AerialSegError(f"unknown scene keys {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Building:
    x0: float
    y0: float
    x1: float
    y1: float
    base: float
    top: float


@dataclass
class Tree:
    cx: float
    cy: float
    a: float  # horizontal semi-axes
    b: float
    c: float  # vertical semi-axis
    cz: float  # canopy centre height


@dataclass
class Scene:
    """Generated tile plus the objects it was built from (for geometric checks)."""

    tile: Tile
    buildings: list = field(default_factory=list)
    trees: list = field(default_factory=list)
    spec: SceneSpec | None = None

    def ground_height(self, x, y):
        return terrain_height(self.spec, x, y)


def terrain_height(spec: SceneSpec, x, y):
    rng = derive_rng(spec.seed, 1)
    p1, p2 = rng.uniform(0, 2 * math.pi, size=2)
    lx, ly = spec.extent
    wave = np.sin(2 * math.pi * np.asarray(x) / lx + p1) + np.sin(2 * math.pi * np.asarray(y) / ly + p2)
    return 0.5 * spec.terrain_amplitude * wave + spec.terrain_slope * np.asarray(x)


def _place_objects(spec: SceneSpec, rng: np.random.Generator):
    lx, ly = spec.extent
    taken: list[tuple[float, float, float, float]] = []  # padded footprints

    def free(x0, y0, x1, y1, pad):
        return all(x1 + pad <= a0 or x0 - pad >= a1 or y1 + pad <= b0 or y0 - pad >= b1
                   for a0, b0, a1, b1 in taken)

    buildings = []
    n_b = int(rng.integers(spec.building_count[0], spec.building_count[1] + 1))
    for _ in range(n_b):
        for _attempt in range(50):
            w, d = rng.uniform(*spec.building_size, size=2)
            if w + 4 > lx or d + 4 > ly:
                break
            x0 = rng.uniform(2, lx - w - 2)
            y0 = rng.uniform(2, ly - d - 2)
            if free(x0, y0, x0 + w, y0 + d, 3.0):
                base = float(terrain_height(spec, x0 + w / 2, y0 + d / 2))
                height = rng.uniform(*spec.building_height)
                buildings.append(Building(x0, y0, x0 + w, y0 + d, base, base + height))
                taken.append((x0, y0, x0 + w, y0 + d))
                break

    trees = []
    n_t = int(rng.integers(spec.tree_count[0], spec.tree_count[1] + 1))
    for _ in range(n_t):
        for _attempt in range(50):
            a, b = rng.uniform(*spec.tree_radius, size=2)
            if 2 * a + 2 > lx or 2 * b + 2 > ly:
                break
            cx = rng.uniform(a + 1, lx - a - 1)
            cy = rng.uniform(b + 1, ly - b - 1)
            if free(cx - a, cy - b, cx + a, cy + b, 1.5):
                top = rng.uniform(*spec.tree_height)
                c = min(0.5 * top, rng.uniform(0.6, 1.0) * max(a, b))
                ground = float(terrain_height(spec, cx, cy))
                trees.append(Tree(cx, cy, a, b, c, ground + top - c))
                taken.append((cx - a, cy - b, cx + a, cy + b))
                break
    return buildings, trees


def generate_scene_objects(spec: SceneSpec, dataset_id: str = "", subset_tags=()) -> Scene:
    """Like :func:`generate_scene` but also returns the placed objects."""
    rng = derive_rng(spec.seed, 0)
    lx, ly = spec.extent
    nx, ny = math.ceil(lx), math.ceil(ly)
    d = spec.target_density
    base = math.floor(d)
    counts = base + (rng.random(nx * ny) < d - base)
    n = int(counts.sum())
    if n < 1:
        raise AerialSegError("scene spec yields no points")
    cell = np.repeat(np.arange(nx * ny), counts)
    x = (cell % nx) + rng.random(n)
    y = (cell // nx) + rng.random(n)
    x = np.minimum(x, lx - 1e-9)
    y = np.minimum(y, ly - 1e-9)
    z = terrain_height(spec, x, y)
    labels = np.full(n, UnifiedClass.GROUND, dtype=np.uint8)
    free_ground = np.ones(n, dtype=bool)

    buildings, trees = _place_objects(spec, rng)
    for bld in buildings:
        inside = (x >= bld.x0) & (x < bld.x1) & (y >= bld.y0) & (y < bld.y1)
        idx = np.flatnonzero(inside)
        z[idx] = bld.top
        labels[idx] = UnifiedClass.BUILDING
        free_ground[idx] = False
        # move some points onto a wall, but only within their own 1 m cell
        cx, cy = np.floor(x[idx]), np.floor(y[idx])
        gaps = np.stack([x[idx] - bld.x0, bld.x1 - x[idx], y[idx] - bld.y0, bld.y1 - y[idx]], axis=1)
        eligible = np.stack([cx == math.floor(bld.x0), cx == math.floor(bld.x1),
                             cy == math.floor(bld.y0), cy == math.floor(bld.y1)], axis=1)
        gaps = np.where(eligible, gaps, np.inf)
        wall = gaps.argmin(axis=1)
        chosen = eligible.any(axis=1) & (rng.random(len(idx)) < spec.facade_fraction)
        move = idx[chosen]
        wall = wall[chosen]
        x[move] = np.where(wall == 0, bld.x0, np.where(wall == 1, bld.x1, x[move]))
        y[move] = np.where(wall == 2, bld.y0, np.where(wall == 3, bld.y1, y[move]))
        z[move] = rng.uniform(bld.base, bld.top, size=len(move))

    for tree in trees:
        rho2 = ((x - tree.cx) / tree.a) ** 2 + ((y - tree.cy) / tree.b) ** 2
        idx = np.flatnonzero(rho2 <= 1.0)
        half = tree.c * np.sqrt(1.0 - rho2[idx])
        if spec.sensor_style == LIDAR_LIKE:
            canopy = idx[rng.random(len(idx)) < spec.canopy_fraction]
            h = tree.c * np.sqrt(1.0 - rho2[canopy])
            z[canopy] = tree.cz + rng.uniform(-1.0, 1.0, size=len(canopy)) * h
        else:
            canopy = idx
            z[canopy] = tree.cz + half
        labels[canopy] = UnifiedClass.VEGETATION
        free_ground[idx] = False

    if spec.clutter_fraction > 0:
        clutter = np.flatnonzero(free_ground & (rng.random(n) < spec.clutter_fraction))
        z[clutter] += rng.uniform(0.3, 2.0, size=len(clutter))
        labels[clutter] = UnifiedClass.UNDEFINED

    if spec.noise_sigma > 0:
        # xy noise never moves a point out of its cell, keeping cell occupancy exact
        cell_x, cell_y = np.floor(x), np.floor(y)
        noise = rng.normal(0.0, spec.noise_sigma, size=(n, 3))
        x = np.clip(x + noise[:, 0], cell_x, np.nextafter(cell_x + 1.0, cell_x))
        y = np.clip(y + noise[:, 1], cell_y, np.nextafter(cell_y + 1.0, cell_y))
        z = z + noise[:, 2]
    positions = np.stack([x, y, z], axis=1)
    tile = Tile(positions, labels, dataset_id=dataset_id, subset_tags=list(subset_tags),
                sensor_kind=spec.sensor_kind)
    return Scene(tile, buildings, trees, spec)


def generate_scene(spec: SceneSpec, dataset_id: str = "", subset_tags=()) -> Tile:
    """Generate one labelled tile; identical specs give bitwise-identical tiles."""
    return generate_scene_objects(spec, dataset_id, subset_tags).tile


# -- benchmark suites ------------------------------------------------------

def load_benchmark_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AerialSegError(f"cannot read benchmark config {path}: {exc}") from None


def default_benchmark_config() -> dict:
    """The packaged desk-scale benchmark definition."""
    return json.loads((Path(__file__).parent / "data" / "desk_benchmark.json").read_text())


def generate_benchmark(config: dict, out_dir, seed: int | None = None) -> dict:
    """Write every tile and manifest described by ``config`` under ``out_dir``.

    ``config`` is ``{"seed": int, "defaults": {scene keys}, "datasets": [...]}``
    where each dataset is ``{"dataset_id", "role", "sensor_kind", "tiles":
    [{"subset_tags": [...], "count": k, "scene": {scene keys}}]}``. A
    density band tag (sparse/medium/dense) is added to each tile from its
    measured density. Returns ``{"train": [paths], "validation": [...],
    "test": [...]}`` of manifest paths.
    """
    if not config or not config.get("datasets"):
        raise AerialSegError("benchmark config lists no datasets")
    seed = int(config.get("seed", 0) if seed is None else seed)
    defaults = dict(config.get("defaults", {}))
    out = Path(out_dir)
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    result: dict = {r.value: [] for r in Role}
    seen = set()
    for ds in config["datasets"]:
        dataset_id = ds["dataset_id"]
        if dataset_id in seen:
            raise AerialSegError(f"duplicate dataset_id {dataset_id!r}")
        seen.add(dataset_id)
        role = Role(ds["role"])
        kind = SensorKind.parse(ds.get("sensor_kind", "lidar"))
        tile_dir = out / "tiles" / dataset_id
        tile_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for group_no, group in enumerate(ds.get("tiles", [])):
            scene_doc = {**defaults, **group.get("scene", {})}
            scene_doc.setdefault("sensor_style", kind.value)
            for copy in range(int(group.get("count", 1))):
                tile_seed = int(derive_rng(seed, stable_key(dataset_id), group_no, copy).integers(2**63))
                spec = SceneSpec.from_json({**scene_doc, "seed": tile_seed})
                if spec.sensor_kind != kind:
                    raise ManifestError(f"tile sensor style differs from dataset {dataset_id!r}")
                tags = list(group.get("subset_tags", []))
                tile = generate_scene(spec, dataset_id, tags)
                band = density_band(tile.overhead_density)
                if band is not None and band not in tags:
                    tags.append(band)
                tile = replace(tile, subset_tags=tags)
                name = f"tile_{group_no:02d}_{copy:02d}.apct"
                write_tile(tile, tile_dir / name)
                entries.append(TileEntry(f"../tiles/{dataset_id}/{name}", tags))
                logger.info("wrote %s/%s: %d points, %.3f pts/m2", dataset_id, name,
                            len(tile), tile.overhead_density)
        if not entries:
            raise AerialSegError(f"dataset {dataset_id!r} has no tiles")
        manifest = DatasetManifest(dataset_id, role, kind, entries, base_dir=out / "manifests")
        path = out / "manifests" / f"{dataset_id}.json"
        save_manifest(manifest, path)
        result[role.value].append(path)
    return result
