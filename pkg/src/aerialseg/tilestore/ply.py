"""Minimal PLY reader/writer for vertex-only point clouds.

Supports ``ascii`` and ``binary_little_endian`` 1.0 files. Only the
``vertex`` element is interpreted; other elements are skipped when their
size can be determined (ASCII, or binary with fixed-size properties).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aerialseg.errors import PlyParseError

# Source code assigned to every point when the file carries no label property.
UNLABELED = -1

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_TYPE_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
               "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}

_LABEL_NAMES = ("label", "class", "classification", "scalar_label", "scalar_class")
_INTENSITY_NAMES = ("intensity", "scalar_intensity", "scalar")


@dataclass
class RawCloud:
    """A point cloud as read from disk, labels still in the source vocabulary."""

    positions: np.ndarray
    labels: np.ndarray
    rgb: np.ndarray | None = None
    intensity: np.ndarray | None = None
    source_vocab_id: str = ""
    # PLY property layout, kept so binary files can be written back verbatim.
    layout: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        if n < 1:
            raise ValueError("a RawCloud needs at least one point")
        self.labels = np.asarray(self.labels).reshape(-1)
        if len(self.labels) != n:
            raise ValueError(f"labels length {len(self.labels)} != {n} points")
        if self.rgb is not None:
            self.rgb = np.asarray(self.rgb).reshape(-1, 3)
            if len(self.rgb) != n:
                raise ValueError(f"rgb length {len(self.rgb)} != {n} points")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity).reshape(-1)
            if len(self.intensity) != n:
                raise ValueError(f"intensity length {len(self.intensity)} != {n} points")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite coordinates")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_labels(self) -> bool:
        return self.layout.get("label") is not None or not np.all(self.labels == UNLABELED)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RawCloud):
            return NotImplemented
        return (
            self.source_vocab_id == other.source_vocab_id
            and _same(self.positions, other.positions)
            and _same(self.labels, other.labels)
            and _same(self.rgb, other.rgb)
            and _same(self.intensity, other.intensity)
        )


def _same(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.dtype == b.dtype and np.array_equal(a, b)


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count_dtype, item_dtype) for lists


def _parse_header(data: bytes) -> tuple[str, list[_Element], int, list[str]]:
    if not data.startswith(b"ply"):
        raise PlyParseError("missing 'ply' magic", 0)
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("header has no 'end_header'", len(data))
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyParseError("header not terminated by newline", end)
    body_start = nl + 1
    fmt = None
    elements: list[_Element] = []
    comments: list[str] = []
    offset = 0
    for raw_line in data[:end].split(b"\n"):
        line_offset = offset
        offset += len(raw_line) + 1
        line = raw_line.decode("ascii", errors="replace").strip()
        if not line or line == "ply":
            continue
        words = line.split()
        key = words[0]
        if key in ("comment", "obj_info"):
            comments.append(line)
            continue
        if key == "format":
            if len(words) != 3 or words[2] != "1.0":
                raise PlyParseError(f"malformed format line {line!r}", line_offset)
            if words[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported PLY format {words[1]!r}", line_offset)
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyParseError(f"malformed element line {line!r}", line_offset)
            elements.append(_Element(words[1], int(words[2]), []))
        elif key == "property":
            if not elements:
                raise PlyParseError("property before any element", line_offset)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PlyParseError(f"unknown list property type in {line!r}", line_offset)
                elements[-1].props.append((words[4], _PLY_TYPES[words[2]], _PLY_TYPES[words[3]]))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1].props.append((words[2], _PLY_TYPES[words[1]]))
            else:
                raise PlyParseError(f"malformed property line {line!r}", line_offset)
        else:
            raise PlyParseError(f"unexpected header keyword {key!r}", line_offset)
    if fmt is None:
        raise PlyParseError("header has no format line", 0)
    return fmt, elements, body_start, comments


def _vertex_arrays_binary(data: bytes, elements: list[_Element], pos: int) -> tuple[np.ndarray, int]:
    vertex = None
    for el in elements:
        if any(len(p) == 3 for p in el.props):
            if el.name == "vertex":
                raise PlyParseError("list properties on vertex are not supported", pos)
            if vertex is None:
                raise PlyParseError(f"cannot skip variable-size element {el.name!r}", pos)
            break
        dtype = np.dtype([(p[0], "<" + p[1]) for p in el.props])
        size = dtype.itemsize * el.count
        if el.name == "vertex":
            have = len(data) - pos
            if have < size:
                got = have // dtype.itemsize if dtype.itemsize else 0
                raise PlyParseError(
                    f"vertex count mismatch: header declares {el.count}, data holds {got}",
                    len(data),
                )
            vertex = np.frombuffer(data, dtype=dtype, count=el.count, offset=pos)
            end = pos + size
        pos += size
    if vertex is None:
        raise PlyParseError("no vertex element", 0)
    return vertex, end


def _vertex_arrays_ascii(data: bytes, elements: list[_Element], pos: int) -> np.ndarray:
    lines = data[pos:].split(b"\n")
    line_offsets = np.cumsum([pos] + [len(l) + 1 for l in lines[:-1]])
    rows: list[bytes] = []
    li = 0
    vertex_el = None
    for el in elements:
        if el.name == "vertex":
            vertex_el = el
            chunk = []
            while len(chunk) < el.count:
                if li >= len(lines):
                    raise PlyParseError(
                        f"vertex count mismatch: header declares {el.count}, data holds {len(chunk)}",
                        len(data),
                    )
                if lines[li].strip():
                    chunk.append((li, lines[li]))
                li += 1
            rows = chunk
            break
        skipped = 0
        while skipped < el.count and li < len(lines):
            if lines[li].strip():
                skipped += 1
            li += 1
    if vertex_el is None:
        raise PlyParseError("no vertex element", 0)
    if any(len(p) == 3 for p in vertex_el.props):
        raise PlyParseError("list properties on vertex are not supported", pos)
    dtype = np.dtype([(p[0], p[1]) for p in vertex_el.props])
    out = np.empty(vertex_el.count, dtype=dtype)
    names = dtype.names
    for i, (line_no, line) in enumerate(rows):
        words = line.split()
        if len(words) != len(names):
            raise PlyParseError(
                f"vertex {i} has {len(words)} values, expected {len(names)}",
                int(line_offsets[line_no]),
            )
        try:
            out[i] = tuple(float(w) if dtype[n].kind == "f" else int(w) for n, w in zip(names, words))
        except (ValueError, OverflowError):
            raise PlyParseError(f"vertex {i} has an unparsable value", int(line_offsets[line_no])) from None
    return out


def parse_ply(data: bytes, vocab_id: str = "") -> RawCloud:
    """Parse PLY bytes into a :class:`RawCloud`, preserving vertex order.

    Raises:
        PlyParseError: on a malformed header, a vertex count mismatch or a
            non-finite coordinate; the message names the byte offset.
    """
    fmt, elements, body, comments = _parse_header(data)
    if not vocab_id:
        tagged = [c.split()[2] for c in comments if c.startswith("comment vocab ") and len(c.split()) == 3]
        vocab_id = tagged[0] if tagged else ""
    if fmt == "ascii":
        vertex = _vertex_arrays_ascii(data, elements, body)
        record = None
    else:
        vertex, _ = _vertex_arrays_binary(data, elements, body)
        record = vertex.dtype.itemsize
    names = vertex.dtype.names or ()
    for axis in "xyz":
        if axis not in names:
            raise PlyParseError(f"vertex element lacks property {axis!r}", body)
        if vertex.dtype[axis].kind != "f":
            raise PlyParseError(f"property {axis!r} must be float or double", body)
    positions = np.stack([vertex[a].astype(np.float64) for a in "xyz"], axis=1)
    finite = np.isfinite(positions).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        offset = body + bad * record if record is not None else body
        raise PlyParseError(f"non-finite coordinate at vertex {bad}", offset)

    layout = {"format": fmt, "props": [(n, vertex.dtype[n].str[1:]) for n in names]}
    label_name = next((n for n in _LABEL_NAMES if n in names), None)
    layout["label"] = label_name
    if label_name is None:
        labels = np.full(len(vertex), UNLABELED, dtype=np.int64)
    else:
        labels = vertex[label_name].astype(np.int64)
    rgb = None
    if all(c in names for c in ("red", "green", "blue")):
        rgb = np.stack([vertex[c] for c in ("red", "green", "blue")], axis=1).astype(np.uint8)
    intensity_name = next((n for n in _INTENSITY_NAMES if n in names), None)
    intensity = None if intensity_name is None else vertex[intensity_name].astype(np.float32)
    return RawCloud(positions, labels, rgb, intensity, vocab_id, layout)


def write_ply(cloud: RawCloud, binary: bool = True, label_type: str = "int") -> bytes:
    """Serialize ``cloud`` as a PLY vertex list.

    Clouds parsed from a PLY file are written back with their original
    property layout, so ``write_ply(parse_ply(b)) == b`` for binary files
    produced by this writer.
    """
    props = cloud.layout.get("props")
    if not props:
        props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
        if cloud.rgb is not None:
            props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        if cloud.intensity is not None:
            props.append(("intensity", "f4"))
        if cloud.has_labels:
            props.append(("label", _PLY_TYPES[label_type]))
    label_name = next((n for n, _ in props if n in _LABEL_NAMES), None)
    intensity_name = next((n for n, _ in props if n in _INTENSITY_NAMES), None)
    n = len(cloud)
    endian = "<" if binary else "="
    table = np.zeros(n, dtype=[(name, endian + t) for name, t in props])
    for i, axis in enumerate("xyz"):
        table[axis] = cloud.positions[:, i]
    if label_name:
        table[label_name] = cloud.labels
    if cloud.rgb is not None:
        for i, c in enumerate(("red", "green", "blue")):
            if c in table.dtype.names:
                table[c] = cloud.rgb[:, i]
    if intensity_name and cloud.intensity is not None:
        table[intensity_name] = cloud.intensity

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    if cloud.source_vocab_id:
        header.append(f"comment vocab {cloud.source_vocab_id}")
    header.append(f"element vertex {n}")
    header += [f"property {_TYPE_NAMES[t]} {name}" for name, t in props]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        return head + table.tobytes()
    lines = []
    for row in table.tolist():
        lines.append(" ".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return head + ("\n".join(lines) + "\n").encode("ascii")


def read_ply(path, vocab_id: str = "") -> RawCloud:
    with open(path, "rb") as fh:
        return parse_ply(fh.read(), vocab_id)
