"""Homogenized tiles and their canonical binary file format.

File layout (all integers little-endian)::

    magic      4 bytes  b"APCT"
    version    u32      = 1
    meta_len   u32      length of the UTF-8 JSON metadata blob
    meta       bytes    {"dataset_id", "subset_tags", "sensor_kind", "overhead_density"}
    n_fields   u32
    n_fields x (u16 name_len, name bytes, u8 element-type code, u64 element count)
    payload    contiguous per-field arrays, in field-table order
    crc32      u32      zlib.crc32 of the payload bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aerialseg.errors import TileFormatError
from aerialseg.taxonomy import SensorKind, UnifiedClass

MAGIC = b"APCT"
VERSION = 1

_DTYPE_CODES = {1: "<u1", 2: "<i4", 3: "<i8", 4: "<f4", 5: "<f8", 6: "<u4"}
_CODE_OF = {np.dtype(v).str: k for k, v in _DTYPE_CODES.items()}


def compute_overhead_density(positions) -> float:
    """Points per m² of occupied footprint (count of occupied 1 m xy cells)."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("overhead density of an empty point set is undefined")
    cells = np.floor(pts[:, :2]).astype(np.int64)
    occupied = len(np.unique(cells, axis=0))
    return len(pts) / occupied


@dataclass(eq=False)
class Tile:
    """One homogenized point-cloud tile.

    ``overhead_density`` is filled in from the positions when omitted and
    validated against them otherwise.
    """

    positions: np.ndarray
    unified_labels: np.ndarray
    dataset_id: str = ""
    subset_tags: list = field(default_factory=list)
    sensor_kind: SensorKind = SensorKind.LIDAR
    rgb: np.ndarray | None = None
    intensity: np.ndarray | None = None
    overhead_density: float | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.unified_labels = np.ascontiguousarray(self.unified_labels, dtype=np.uint8).reshape(-1)
        n = len(self.positions)
        if n < 1:
            raise ValueError("a tile needs at least one point")
        if len(self.unified_labels) != n:
            raise ValueError(f"unified_labels length {len(self.unified_labels)} != {n} points")
        if self.unified_labels.max() > max(UnifiedClass):
            raise ValueError("unified_labels hold a value outside the unified taxonomy")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite coordinates")
        if self.rgb is not None:
            self.rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8).reshape(-1, 3)
            if len(self.rgb) != n:
                raise ValueError("rgb length does not match positions")
        if self.intensity is not None:
            self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float32).reshape(-1)
            if len(self.intensity) != n:
                raise ValueError("intensity length does not match positions")
        self.sensor_kind = SensorKind(self.sensor_kind)
        self.subset_tags = [str(t) for t in self.subset_tags]
        measured = compute_overhead_density(self.positions)
        if self.overhead_density is None:
            self.overhead_density = measured
        else:
            self.overhead_density = float(self.overhead_density)
            if not abs(self.overhead_density - measured) <= 1e-9 * measured:
                raise ValueError(
                    f"overhead_density {self.overhead_density} disagrees with measured {measured}"
                )

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tile):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and np.array_equal(a, b)

        return (
            self.dataset_id == other.dataset_id
            and self.subset_tags == other.subset_tags
            and self.sensor_kind == other.sensor_kind
            and self.overhead_density == other.overhead_density
            and same(self.positions, other.positions)
            and same(self.unified_labels, other.unified_labels)
            and same(self.rgb, other.rgb)
            and same(self.intensity, other.intensity)
        )

    def class_counts(self) -> dict:
        counts = np.bincount(self.unified_labels, minlength=len(UnifiedClass))
        return {c: int(counts[c]) for c in UnifiedClass}


def _fields(tile: Tile) -> list[tuple[str, np.ndarray]]:
    out = [("positions", tile.positions.reshape(-1)), ("unified_labels", tile.unified_labels)]
    if tile.rgb is not None:
        out.append(("rgb", tile.rgb.reshape(-1)))
    if tile.intensity is not None:
        out.append(("intensity", tile.intensity))
    return out


def tile_to_bytes(tile: Tile) -> bytes:
    meta = json.dumps(
        {
            "dataset_id": tile.dataset_id,
            "subset_tags": tile.subset_tags,
            "sensor_kind": tile.sensor_kind.value,
            "overhead_density": tile.overhead_density,
        },
        sort_keys=True,
    ).encode("utf-8")
    head = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta]
    fields = _fields(tile)
    head.append(struct.pack("<I", len(fields)))
    payload = []
    for name, arr in fields:
        arr = np.ascontiguousarray(arr, dtype=np.dtype(arr.dtype).newbyteorder("<"))
        raw = name.encode("ascii")
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BQ", _CODE_OF[arr.dtype.str], arr.size))
        payload.append(arr.tobytes())
    body = b"".join(payload)
    return b"".join(head) + body + struct.pack("<I", zlib.crc32(body))


def tile_from_bytes(data: bytes) -> Tile:
    """Decode a tile; any structural or checksum problem raises TileFormatError."""
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TileFormatError(f"truncated tile file while reading {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise TileFormatError("bad magic: not an APCT tile file")
    version, meta_len = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise TileFormatError(f"unsupported tile format version {version}")
    try:
        meta = json.loads(bytes(take(meta_len, "metadata")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise TileFormatError("corrupt tile metadata") from None
    (n_fields,) = struct.unpack("<I", take(4, "field count"))
    table = []
    for _ in range(n_fields):
        (name_len,) = struct.unpack("<H", take(2, "field name length"))
        name = bytes(take(name_len, "field name")).decode("ascii", errors="replace")
        code, count = struct.unpack("<BQ", take(9, "field descriptor"))
        if code not in _DTYPE_CODES:
            raise TileFormatError(f"field {name!r} has unknown element type {code}")
        table.append((name, np.dtype(_DTYPE_CODES[code]), count))
    payload_start = pos
    arrays = {}
    for name, dtype, count in table:
        raw = take(dtype.itemsize * count, f"field {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))
    body = view[payload_start:pos]
    (crc,) = struct.unpack("<I", take(4, "checksum"))
    if zlib.crc32(body) != crc:
        raise TileFormatError("checksum mismatch: tile payload is corrupt")
    if pos != len(view):
        raise TileFormatError(f"{len(view) - pos} trailing bytes after checksum")
    try:
        return Tile(
            positions=arrays["positions"].reshape(-1, 3),
            unified_labels=arrays["unified_labels"],
            dataset_id=meta["dataset_id"],
            subset_tags=meta["subset_tags"],
            sensor_kind=SensorKind(meta["sensor_kind"]),
            rgb=arrays["rgb"].reshape(-1, 3) if "rgb" in arrays else None,
            intensity=arrays.get("intensity"),
            overhead_density=meta["overhead_density"],
        )
    except (KeyError, ValueError) as exc:
        raise TileFormatError(f"invalid tile contents: {exc}") from None


def write_tile(tile: Tile, path) -> None:
    path = Path(path)
    data = tile_to_bytes(tile)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    tmp.replace(path)


def read_tile(path) -> Tile:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise TileFormatError(f"cannot read tile {path}: {exc}") from None
    return tile_from_bytes(data)
