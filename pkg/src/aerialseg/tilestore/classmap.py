"""Source-vocabulary to unified-taxonomy label maps."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from aerialseg.errors import ClassMapError
from aerialseg.taxonomy import EVAL_CLASSES, UnifiedClass


@dataclass(frozen=True)
class ClassMap:
    """Total mapping from a vocabulary's integer codes to :class:`UnifiedClass`.

    Every code of the vocabulary must be listed; codes that belong to no
    shared category map to ``UNDEFINED`` explicitly. A map that leaves
    Ground, Building or Vegetation without any source code is rejected.
    """

    vocab_id: str
    entries: dict  # int code -> UnifiedClass
    names: dict | None = None  # optional int code -> human-readable source name

    def __post_init__(self):
        if not self.vocab_id:
            raise ClassMapError("class map needs a vocab_id")
        entries = {}
        for code, cls in self.entries.items():
            try:
                key = int(code)
            except (TypeError, ValueError):
                raise ClassMapError(f"source code {code!r} is not an integer") from None
            if key in entries:
                raise ClassMapError(f"source code {key} listed more than once")
            entries[key] = cls if isinstance(cls, UnifiedClass) else UnifiedClass.parse(str(cls))
        missing = [c.title for c in EVAL_CLASSES if c not in entries.values()]
        if missing:
            raise ClassMapError(
                f"class map {self.vocab_id!r} has no source code for {', '.join(missing)}"
            )
        object.__setattr__(self, "entries", dict(sorted(entries.items())))

    def lookup_table(self) -> tuple[np.ndarray, int]:
        """Dense lookup array indexed by ``code - offset``; unknown slots hold 255."""
        codes = np.fromiter(self.entries, dtype=np.int64)
        offset = int(codes.min())
        table = np.full(int(codes.max()) - offset + 1, 255, dtype=np.uint8)
        table[codes - offset] = [int(v) for v in self.entries.values()]
        return table, offset

    def to_json(self) -> dict:
        doc = {
            "vocab_id": self.vocab_id,
            "entries": {str(k): v.title for k, v in self.entries.items()},
        }
        if self.names:
            doc["names"] = {str(k): v for k, v in sorted(self.names.items())}
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ClassMap":
        try:
            vocab_id = doc["vocab_id"]
            entries = doc["entries"]
        except (KeyError, TypeError):
            raise ClassMapError("class map JSON needs 'vocab_id' and 'entries'") from None
        try:
            parsed = {int(k): UnifiedClass.parse(v) for k, v in entries.items()}
        except ValueError as exc:
            raise ClassMapError(str(exc)) from None
        names = doc.get("names")
        if names is not None:
            names = {int(k): v for k, v in names.items()}
        return cls(vocab_id, parsed, names)


def load_class_map(path) -> ClassMap:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ClassMapError(f"cannot read class map {path}: {exc}") from None
    return ClassMap.from_json(doc)


def save_class_map(cmap: ClassMap, path) -> None:
    Path(path).write_text(json.dumps(cmap.to_json(), indent=2) + "\n")


def remap_labels(source_labels: np.ndarray, source_vocab_id: str, cmap: ClassMap):
    """Map source codes to unified labels.

    Returns ``(unified, counts)`` where ``unified`` is a uint8 array of
    :class:`UnifiedClass` values and ``counts`` maps every UnifiedClass to its
    point count.

    Raises:
        ClassMapError: vocabulary mismatch, or a code the map does not list.
    """
    if source_vocab_id != cmap.vocab_id:
        raise ClassMapError(
            f"vocabulary mismatch: cloud uses {source_vocab_id!r}, map is {cmap.vocab_id!r}"
        )
    codes = np.asarray(source_labels, dtype=np.int64)
    table, offset = cmap.lookup_table()
    pos = codes - offset
    inside = (pos >= 0) & (pos < len(table))
    unified = np.full(len(codes), 255, dtype=np.uint8)
    unified[inside] = table[pos[inside]]
    unknown = unified == 255
    if unknown.any():
        bad = sorted(set(codes[unknown].tolist()))
        raise ClassMapError(
            f"unknown source code(s) {bad} for vocabulary {cmap.vocab_id!r} (stale class map?)"
        )
    counts = {c: int(n) for c, n in zip(UnifiedClass, np.bincount(unified, minlength=len(UnifiedClass)))}
    return unified, counts


def _table_map(vocab_id: str, ground, building, vegetation, undefined=()) -> ClassMap:
    entries, names = {}, {}
    code = 0
    for cls, group in ((UnifiedClass.GROUND, ground), (UnifiedClass.BUILDING, building),
                       (UnifiedClass.VEGETATION, vegetation), (UnifiedClass.UNDEFINED, undefined)):
        for name in group:
            entries[code] = cls
            names[code] = name
            code += 1
    return ClassMap(vocab_id, entries, names)


# Category groupings of the public aerial benchmarks. Codes here are a
# compact renumbering (ground-like first); real files need their own map.
H3D_LIKE = _table_map(
    "h3d",
    ground=("Low Vegetation", "Impervious Surface", "Soil/Gravel"),
    building=("Roof", "Facade", "Chimney"),
    vegetation=("Shrub",),
    undefined=("Vehicle", "Urban Furniture", "Vertical Surface", "Tree"),
)
ISPRS_LIKE = _table_map(
    "isprs",
    ground=("Low Vegetation", "Impervious Surface"),
    building=("Roof", "Facade"),
    vegetation=("Shrub", "Tree"),
    undefined=("Powerline", "Car", "Fence/Hedge"),
)
DALES_LIKE = _table_map(
    "dales",
    ground=("Ground",),
    building=("Buildings",),
    vegetation=("Vegetation",),
    undefined=("Cars", "Trucks", "Power Lines", "Fences", "Poles"),
)
