"""Edge-list ingestion and the shared CSR/CSC/COO graph layout.

One symmetric topology serves as both the CSR and the CSC view. The COO row
array is laid out CSR-style, so CSR and COO edge IDs are the implicit slot
index; only the CSC view carries an explicit edge-ID array (``csc_eid``).
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

__all__ = [
    "FIELD_KINDS",
    "EdgeSchema",
    "EdgeList",
    "BuildOptions",
    "UnifiedGraph",
    "GraphError",
    "EdgeParseError",
    "GraphFormatError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedStreamError",
    "parse_edge_text",
    "add_edges",
    "build_graph",
    "from_edges",
    "save_graph",
    "load_graph",
    "degrees",
]

FIELD_KINDS = {
    "vertex-id": np.dtype("<u8"),
    "signed-int-32": np.dtype("<i4"),
    "unsigned-int-32": np.dtype("<u4"),
    "float-32": np.dtype("<f4"),
    "float-64": np.dtype("<f8"),
}

MAGIC = b"GPYG"
FORMAT_VERSION = 1
_FLAG_EDGE_IDS = 0x1
_HEADER = struct.Struct("<4sIIQQ")


class GraphError(ValueError):
    """Invalid input to graph construction."""


class EdgeParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class GraphFormatError(ValueError):
    """Malformed binary graph stream."""


class BadMagicError(GraphFormatError):
    pass


class VersionMismatchError(GraphFormatError):
    pass


class TruncatedStreamError(GraphFormatError):
    pass


@dataclass(frozen=True)
class EdgeSchema:
    """Ordered per-edge record layout; fields 0 and 1 are (src, dst)."""

    fields: tuple[tuple[str, str], ...] = (("src", "vertex-id"), ("dst", "vertex-id"))

    def __post_init__(self):
        fields = tuple((str(n), str(k)) for n, k in self.fields)
        object.__setattr__(self, "fields", fields)
        if len(fields) < 2:
            raise GraphError("edge schema needs at least two fields")
        if fields[0][1] != "vertex-id" or fields[1][1] != "vertex-id":
            raise GraphError("fields 0 and 1 must be vertex-id")
        names = [n for n, _ in fields]
        if len(set(names)) != len(names):
            raise GraphError(f"duplicate field names in schema: {names}")
        for name, kind in fields:
            if kind not in FIELD_KINDS:
                raise GraphError(f"unknown field kind {kind!r} for field {name!r}")

    @classmethod
    def of(cls, *fields: tuple[str, str]) -> "EdgeSchema":
        return cls(tuple(fields))

    @property
    def dtype(self) -> np.dtype:
        return np.dtype([(n, FIELD_KINDS[k]) for n, k in self.fields])

    @property
    def width(self) -> int:
        return self.dtype.itemsize

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.fields]


@dataclass
class EdgeList:
    schema: EdgeSchema = field(default_factory=EdgeSchema)
    rows: bytearray = field(default_factory=bytearray)
    count: int = 0
    vcount_hint: int = 0

    def __post_init__(self):
        if self.count * self.schema.width != len(self.rows):
            raise GraphError(
                f"record buffer holds {len(self.rows)} bytes, expected "
                f"{self.count} x {self.schema.width}"
            )

    @property
    def records(self) -> np.ndarray:
        """Structured read-only view of the record buffer."""
        view = np.frombuffer(bytes(self.rows), dtype=self.schema.dtype, count=self.count)
        return view

    @property
    def src(self) -> np.ndarray:
        return self.records[self.schema.names[0]]

    @property
    def dst(self) -> np.ndarray:
        return self.records[self.schema.names[1]]

    @classmethod
    def from_arrays(cls, src, dst, schema: EdgeSchema | None = None, **props) -> "EdgeList":
        schema = schema or EdgeSchema()
        src = np.asarray(src)
        dst = np.asarray(dst)
        if src.shape != dst.shape or src.ndim != 1:
            raise GraphError("src and dst must be 1-D arrays of equal length")
        if np.any(src < 0) or np.any(dst < 0):
            raise GraphError("vertex IDs must be non-negative")
        rec = np.zeros(len(src), dtype=schema.dtype)
        names = schema.names
        rec[names[0]] = src
        rec[names[1]] = dst
        for name, values in props.items():
            rec[name] = values
        hint = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        return cls(schema, bytearray(rec.tobytes()), len(rec), hint)


def _parse_token(token: bytes, kind: str, lineno: int):
    try:
        text = token.decode("ascii")
        if kind in ("float-32", "float-64"):
            return float(text)
        value = int(text)
    except (UnicodeDecodeError, ValueError):
        raise EdgeParseError(lineno, f"cannot parse {token!r} as {kind}") from None
    lo, hi = {
        "vertex-id": (0, 2**64 - 1),
        "signed-int-32": (-(2**31), 2**31 - 1),
        "unsigned-int-32": (0, 2**32 - 1),
    }[kind]
    if not lo <= value <= hi:
        raise EdgeParseError(lineno, f"value {value} overflows {kind}")
    return value


def parse_edge_text(
    source: bytes | str | BinaryIO,
    schema: EdgeSchema | None = None,
    delimiter: bytes | str = b" ",
    skip_comments: bool = True,
) -> EdgeList:
    """Parse one edge per line into an :class:`EdgeList`.

    Blank lines are ignored, and so are ``#`` lines when ``skip_comments`` is
    set. A whitespace delimiter tolerates runs of itself.
    """
    schema = schema or EdgeSchema()
    if isinstance(delimiter, str):
        delimiter = delimiter.encode()
    if len(delimiter) != 1 or delimiter in b"\r\n":
        raise GraphError(f"delimiter must be a single non-newline byte, got {delimiter!r}")
    if isinstance(source, str):
        source = source.encode()
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)

    kinds = [k for _, k in schema.fields]
    collapse = delimiter in b" \t"
    parsed: list[tuple] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip(b"\r\n")
        if collapse:
            line = line.strip(delimiter)
        if not line.strip():
            continue
        if skip_comments and line.lstrip().startswith(b"#"):
            continue
        tokens = line.split(delimiter)
        if collapse:
            tokens = [t for t in tokens if t]
        tokens = [t.strip() for t in tokens]
        if len(tokens) != len(kinds):
            raise EdgeParseError(lineno, f"expected {len(kinds)} fields, got {len(tokens)}")
        parsed.append(tuple(_parse_token(t, k, lineno) for t, k in zip(tokens, kinds)))

    rec = np.array(parsed, dtype=schema.dtype) if parsed else np.zeros(0, schema.dtype)
    hint = 0
    if len(rec):
        names = schema.names
        hint = int(max(rec[names[0]].max(), rec[names[1]].max())) + 1
    return EdgeList(schema, bytearray(rec.tobytes()), len(rec), hint)


def add_edges(edges: EdgeList, batch: bytes | bytearray | np.ndarray, n: int) -> EdgeList:
    """Append ``n`` packed records to ``edges`` in place and return it."""
    if isinstance(batch, np.ndarray):
        if batch.dtype != edges.schema.dtype:
            raise GraphError(f"batch dtype {batch.dtype} does not match schema {edges.schema.dtype}")
        batch = batch.tobytes()
    width = edges.schema.width
    if n < 0 or len(batch) != n * width:
        raise GraphError(f"batch of {len(batch)} bytes is not {n} records of {width} bytes")
    rec = np.frombuffer(bytes(batch), dtype=edges.schema.dtype)
    edges.rows.extend(batch)
    edges.count += n
    if n:
        names = edges.schema.names
        top = int(max(rec[names[0]].max(), rec[names[1]].max())) + 1
        edges.vcount_hint = max(edges.vcount_hint, top)
    return edges


@dataclass(frozen=True)
class BuildOptions:
    symmetrize: bool = True
    need_edge_ids: bool = True
    sort_neighbors: bool = True


@dataclass(frozen=True, eq=False)
class UnifiedGraph:
    """Shared-topology graph storage.

    ``offsets``/``col_ids`` form the CSR view, which doubles as the CSC view
    because the topology is symmetric. ``coo_rows`` pairs with ``col_ids`` to
    give COO in CSR order. ``csc_eid[j]`` is the CSR slot of the transposed
    edge of slot ``j``; it is ``None`` when edge IDs were not requested.
    """

    vcount: int
    offsets: np.ndarray
    col_ids: np.ndarray
    coo_rows: np.ndarray
    csc_eid: np.ndarray | None = None
    edge_props: np.ndarray | None = None

    def __post_init__(self):
        for name in ("offsets", "col_ids", "coo_rows", "csc_eid"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=np.int64)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        deg = np.diff(self.offsets).astype(np.float64)
        deg.flags.writeable = False
        clamped = np.maximum(deg, 1.0)
        clamped.flags.writeable = False
        object.__setattr__(self, "deg", deg)
        object.__setattr__(self, "deg_clamped", clamped)

    @property
    def ecount(self) -> int:
        return int(self.col_ids.shape[0])

    @property
    def has_edge_ids(self) -> bool:
        return self.csc_eid is not None

    @property
    def storage_elements(self) -> int:
        n = (self.vcount + 1) + 2 * self.ecount
        if self.has_edge_ids:
            n += self.ecount
        return n

    def row(self, r: int) -> np.ndarray:
        return self.col_ids[self.offsets[r] : self.offsets[r + 1]]

    def same_structure(self, other: "UnifiedGraph") -> bool:
        if self.vcount != other.vcount or self.has_edge_ids != other.has_edge_ids:
            return False
        pairs = [(self.offsets, other.offsets), (self.col_ids, other.col_ids),
                 (self.coo_rows, other.coo_rows)]
        if self.has_edge_ids:
            pairs.append((self.csc_eid, other.csc_eid))
        return all(np.array_equal(a, b) for a, b in pairs)

    def __eq__(self, other):
        if not isinstance(other, UnifiedGraph):
            return NotImplemented
        return self.same_structure(other)

    __hash__ = None

    def __repr__(self):
        return (f"UnifiedGraph(vcount={self.vcount}, ecount={self.ecount}, "
                f"edge_ids={self.has_edge_ids})")


def _pair_transposed_slots(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # Slots sorted by (col, row) enumerate the transposed edges in CSR order.
    return np.lexsort((rows, cols)).astype(np.int64)


def build_graph(edges: EdgeList, vcount: int | None = None,
                opts: BuildOptions | None = None) -> UnifiedGraph:
    opts = opts or BuildOptions()
    if vcount is None:
        vcount = edges.vcount_hint
    if vcount < 0:
        raise GraphError("vcount must be non-negative")
    src = edges.src
    dst = edges.dst
    if edges.count and (src.max() >= vcount or dst.max() >= vcount):
        bad = int(max(src.max(), dst.max()))
        raise GraphError(f"vertex ID {bad} out of range for vcount={vcount}")
    src = src.astype(np.int64)
    dst = dst.astype(np.int64)
    props = edges.records if len(edges.schema.fields) > 2 else None
    if props is not None:
        props = props[edges.schema.names[2:]]

    if opts.symmetrize:
        loops = src == dst
        rows = np.concatenate([src, dst[~loops]])
        cols = np.concatenate([dst, src[~loops]])
        if props is not None:
            props = np.concatenate([props, props[~loops]])
    else:
        rows, cols = src, dst

    if opts.sort_neighbors or opts.need_edge_ids or opts.symmetrize:
        order = np.lexsort((cols, rows))
    else:
        order = np.argsort(rows, kind="stable")
    rows = rows[order]
    cols = cols[order]
    if props is not None:
        props = props[order]

    if len(rows):
        dup = np.zeros(len(rows), dtype=bool)
        dup[1:] = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if not opts.sort_neighbors and not opts.symmetrize:
            # unsorted rows only catch adjacent duplicates; recheck on a sorted copy
            key = np.lexsort((cols, rows))
            r2, c2 = rows[key], cols[key]
            has_dup = bool(np.any((r2[1:] == r2[:-1]) & (c2[1:] == c2[:-1])))
        else:
            has_dup = bool(dup.any())
        if has_dup:
            if not opts.symmetrize:
                raise GraphError("duplicate edges in input (symmetrize off)")
            keep = ~dup
            rows, cols = rows[keep], cols[keep]
            if props is not None:
                props = props[keep]

    offsets = np.zeros(vcount + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=vcount), out=offsets[1:])

    csc_eid = None
    if opts.need_edge_ids:
        perm = _pair_transposed_slots(rows, cols)
        if not (np.array_equal(rows[perm], cols) and np.array_equal(cols[perm], rows)):
            raise GraphError("edge IDs require a symmetric topology; enable symmetrize")
        csc_eid = perm

    return UnifiedGraph(vcount, offsets, cols, rows, csc_eid, props)


def from_edges(pairs: Iterable[Sequence[int]] | np.ndarray, vcount: int | None = None,
               symmetrize: bool = True, need_edge_ids: bool = True) -> UnifiedGraph:
    """Convenience wrapper: build from (src, dst) pairs."""
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    arr = arr.reshape(-1, 2)
    el = EdgeList.from_arrays(arr[:, 0], arr[:, 1])
    if vcount is None:
        vcount = el.vcount_hint
    return build_graph(el, vcount, BuildOptions(symmetrize=symmetrize, need_edge_ids=need_edge_ids))


def save_graph(g: UnifiedGraph, sink: BinaryIO) -> int:
    """Write ``g`` in the little-endian ``GPYG`` v1 layout; returns bytes written."""
    flags = _FLAG_EDGE_IDS if g.has_edge_ids else 0
    chunks = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, flags, g.vcount, g.ecount),
        g.offsets.astype("<u8").tobytes(),
        g.col_ids.astype("<u8").tobytes(),
        g.coo_rows.astype("<u8").tobytes(),
    ]
    if g.has_edge_ids:
        chunks.append(g.csc_eid.astype("<u8").tobytes())
    total = 0
    for c in chunks:
        sink.write(c)
        total += len(c)
    return total


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise TruncatedStreamError(f"stream ended inside {what}: wanted {n} bytes, got {len(data)}")
    return data


def _read_u64(source: BinaryIO, count: int, what: str) -> np.ndarray:
    raw = _read_exact(source, count * 8, what)
    return np.frombuffer(raw, dtype="<u8").astype(np.int64)


def load_graph(source: BinaryIO) -> UnifiedGraph:
    head = source.read(_HEADER.size)
    if len(head) >= 4 and head[:4] != MAGIC:
        raise BadMagicError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) != _HEADER.size:
        raise TruncatedStreamError("stream ended inside header")
    _, version, flags, vcount, ecount = _HEADER.unpack(head)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported format version {version}")
    offsets = _read_u64(source, vcount + 1, "offsets")
    col_ids = _read_u64(source, ecount, "col_ids")
    coo_rows = _read_u64(source, ecount, "coo_rows")
    csc_eid = _read_u64(source, ecount, "csc_eid") if flags & _FLAG_EDGE_IDS else None
    if offsets[0] != 0 or offsets[-1] != ecount or np.any(np.diff(offsets) < 0):
        raise GraphFormatError("offsets are not a valid CSR row pointer")
    return UnifiedGraph(int(vcount), offsets, col_ids, coo_rows, csc_eid)


def degrees(g: UnifiedGraph, clamped: bool = False) -> np.ndarray:
    return (g.deg_clamped if clamped else g.deg).copy()
