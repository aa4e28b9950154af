"""Dataset manifests and training-set class statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from aerialseg.errors import ManifestError
from aerialseg.taxonomy import SensorKind, UnifiedClass
from aerialseg.tilestore.tile import Tile, read_tile


class Role(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass
class TileEntry:
    path: str  # relative to the manifest's directory unless absolute
    subset_tags: list


@dataclass
class DatasetManifest:
    dataset_id: str
    role: Role
    sensor_kind: SensorKind
    tiles: list = field(default_factory=list)
    class_map: str | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        self.role = Role(self.role)
        self.sensor_kind = SensorKind(self.sensor_kind)
        self.tiles = [t if isinstance(t, TileEntry) else TileEntry(t["path"], list(t["subset_tags"]))
                      for t in self.tiles]
        for entry in self.tiles:
            if not entry.subset_tags:
                raise ManifestError(f"tile {entry.path} in {self.dataset_id!r} carries no subset tag")

    @property
    def subsets(self) -> dict:
        """Subset tag -> list of tile indices, in first-seen order."""
        out: dict = {}
        for i, entry in enumerate(self.tiles):
            for tag in entry.subset_tags:
                out.setdefault(tag, []).append(i)
        return out

    def tile_path(self, i: int) -> Path:
        p = Path(self.tiles[i].path)
        return p if p.is_absolute() else self.base_dir / p

    def load_tile(self, i: int) -> Tile:
        return read_tile(self.tile_path(i))

    def load_tiles(self) -> list:
        return [self.load_tile(i) for i in range(len(self.tiles))]

    def validate(self) -> None:
        """Every referenced tile exists and decodes; raises ManifestError otherwise."""
        if not self.tiles:
            raise ManifestError(f"manifest {self.dataset_id!r} lists no tiles")
        for i in range(len(self.tiles)):
            path = self.tile_path(i)
            if not path.exists():
                raise ManifestError(f"tile file {path} referenced by {self.dataset_id!r} is missing")
            self.load_tile(i)

    def to_json(self) -> dict:
        doc = {
            "dataset_id": self.dataset_id,
            "role": self.role.value,
            "sensor_kind": self.sensor_kind.value,
            "tiles": [{"path": t.path, "subset_tags": list(t.subset_tags)} for t in self.tiles],
        }
        if self.class_map is not None:
            doc["class_map"] = self.class_map
        return doc


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
    try:
        return DatasetManifest(
            dataset_id=doc["dataset_id"],
            role=doc["role"],
            sensor_kind=doc["sensor_kind"],
            tiles=doc.get("tiles", []),
            class_map=doc.get("class_map"),
            base_dir=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"manifest {path} is malformed: {exc}") from None


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


WEIGHTED_CLASSES = (UnifiedClass.GROUND, UnifiedClass.VEGETATION, UnifiedClass.BUILDING)


def class_weights_from_counts(counts) -> dict:
    """Normalized inverse-frequency weights over Ground, Vegetation, Building.

    ``counts`` maps UnifiedClass to a point count or frequency; Undefined is
    ignored. Raises ManifestError if any weighted class has zero points.
    """
    freq = np.array([float(counts.get(c, 0)) for c in WEIGHTED_CLASSES])
    if np.any(freq <= 0):
        empty = [c.title for c, f in zip(WEIGHTED_CLASSES, freq) if f <= 0]
        raise ManifestError(f"class weights undefined: no training points of {', '.join(empty)}")
    freq = freq / freq.sum()
    inv = 1.0 / freq
    weights = inv / inv.sum()
    return {c: float(w) for c, w in zip(WEIGHTED_CLASSES, weights)}


def class_counts(manifests) -> dict:
    totals = {c: 0 for c in UnifiedClass}
    for manifest in manifests:
        for tile in manifest.load_tiles():
            for c, n in tile.class_counts().items():
                totals[c] += n
    return totals


def class_weights(manifests) -> dict:
    """Inverse-occurrence class weights over the training tiles of ``manifests``."""
    if isinstance(manifests, DatasetManifest):
        manifests = [manifests]
    return class_weights_from_counts(class_counts(manifests))
