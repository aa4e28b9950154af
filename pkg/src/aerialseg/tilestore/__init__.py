"""Ingest, label remapping and canonical storage of point-cloud tiles."""

from aerialseg.tilestore.classmap import ClassMap, load_class_map, remap_labels, save_class_map
from aerialseg.tilestore.manifest import (
    DatasetManifest,
    Role,
    TileEntry,
    class_counts,
    class_weights,
    class_weights_from_counts,
    load_manifest,
    save_manifest,
)
from aerialseg.tilestore.ply import UNLABELED, RawCloud, parse_ply, read_ply, write_ply
from aerialseg.tilestore.tile import (
    Tile,
    compute_overhead_density,
    read_tile,
    tile_from_bytes,
    tile_to_bytes,
    write_tile,
)


def remap_cloud(raw: RawCloud, cmap: ClassMap, **metadata) -> tuple[Tile, dict]:
    """Build a Tile from ``raw`` with labels mapped through ``cmap``.

    ``metadata`` (dataset_id, subset_tags, sensor_kind) is passed to Tile.
    Returns the tile and the per-UnifiedClass point counts.
    """
    unified, counts = remap_labels(raw.labels, raw.source_vocab_id, cmap)
    tile = Tile(raw.positions, unified, rgb=raw.rgb, intensity=raw.intensity, **metadata)
    return tile, counts


__all__ = [
    "ClassMap",
    "DatasetManifest",
    "RawCloud",
    "Role",
    "Tile",
    "TileEntry",
    "UNLABELED",
    "class_counts",
    "class_weights",
    "class_weights_from_counts",
    "compute_overhead_density",
    "load_class_map",
    "load_manifest",
    "parse_ply",
    "read_ply",
    "read_tile",
    "remap_cloud",
    "remap_labels",
    "save_class_map",
    "save_manifest",
    "tile_from_bytes",
    "tile_to_bytes",
    "write_ply",
    "write_tile",
]
