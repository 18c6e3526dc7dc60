"""Bit-exact columnar file format (".brcl").

File layout, all integers little-endian:

    magic "BRCL"
    column chunks, schema order, each encoded per its chosen encoding
    footer: UTF-8 JSON, lexicographically sorted keys
    u32 footer length
    magic "BRCL"

Encodings:

    PLAIN  INT64: 8 bytes/value. BYTES: u32 length + raw bytes per value.
           BOOL: one byte per value, 0 or 1.
    RLE    repeated (u32 run_length, PLAIN-encoded single value); runs maximal.
    DICT   u32 dict_size, dictionary values PLAIN in first-occurrence order,
           then u32 index per value.
    DELTA  INT64 only: first value as raw i64, then per-delta zigzag LEB128
           varints. Deltas wrap modulo 2^64 so any i64 sequence round-trips.

Chunks carry a CRC-32C over exactly their encoded bytes and min/max stats
(BYTES stats compare lexicographically and are truncated to 64 bytes). The
payload holds no timestamps, so identical input yields identical bytes on any
platform.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Callable, Sequence

from .crc32c import crc32c
from .errors import (
    BadMagic,
    ChecksumMismatch,
    CorruptChunk,
    FooterCorrupt,
    IllegalEncoding,
    SchemaViolation,
)
from .fixedpoint import I64_MAX, I64_MIN

MAGIC = b"BRCL"
FORMAT_VERSION = 1
DEFAULT_WRITER = "brclake/1"
STATS_TRUNCATE_BYTES = 64

INT64 = "INT64"
BYTES = "BYTES"
BOOL = "BOOL"
PHYSICAL_TYPES = (INT64, BYTES, BOOL)


class Encoding(IntEnum):
    PLAIN = 0
    RLE = 1
    DICT = 2
    DELTA = 3


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    physical_type: str

    def validate(self) -> None:
        if not re.match(r"^[a-z_][a-z0-9_]*$", self.name):
            raise ValueError(f"bad column name {self.name!r}")
        if self.physical_type not in PHYSICAL_TYPES:
            raise ValueError(f"bad physical type {self.physical_type!r}")


@dataclass
class ColumnChunk:
    encoding: Encoding
    value_count: int
    byte_offset: int
    byte_length: int
    crc32c: int
    min: Any
    max: Any


@dataclass
class FileFooter:
    format_version: int
    row_count: int
    schema: list[ColumnSchema]
    chunks: list[ColumnChunk]
    writer: str


# -- primitive codecs ----------------------------------------------------------

_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")


def _zigzag(n: int) -> int:
    return ((n << 1) ^ (n >> 63)) & ((1 << 64) - 1)


def _unzigzag(u: int) -> int:
    return (u >> 1) ^ -(u & 1)


def _wrap_i64(n: int) -> int:
    return (n + 2**63) % 2**64 - 2**63


def _varint_encode(u: int, out: bytearray) -> None:
    while u >= 0x80:
        out.append((u & 0x7F) | 0x80)
        u >>= 7
    out.append(u)


def _varint_decode(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    start = pos
    while True:
        if pos >= len(data):
            raise CorruptChunk("truncated varint")
        if pos - start >= 10:
            raise CorruptChunk("varint overflow")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            break
        shift += 7
    if result >= 1 << 64:
        raise CorruptChunk("varint overflow")
    return result, pos


def _check_value(value: Any, physical_type: str) -> bool:
    if physical_type == INT64:
        return type(value) is int and I64_MIN <= value <= I64_MAX
    if physical_type == BYTES:
        return type(value) in (bytes, bytearray)
    return type(value) is bool


def _encode_plain(values: Sequence[Any], physical_type: str) -> bytes:
    if physical_type == INT64:
        return struct.pack(f"<{len(values)}q", *values)
    if physical_type == BOOL:
        return bytes(1 if v else 0 for v in values)
    parts = []
    for v in values:
        parts.append(_U32.pack(len(v)))
        parts.append(bytes(v))
    return b"".join(parts)


def _decode_plain(data: bytes, physical_type: str, count: int, pos: int = 0) -> tuple[list, int]:
    if physical_type == INT64:
        end = pos + 8 * count
        if end > len(data):
            raise CorruptChunk("truncated PLAIN INT64 stream")
        return list(struct.unpack_from(f"<{count}q", data, pos)), end
    if physical_type == BOOL:
        end = pos + count
        if end > len(data):
            raise CorruptChunk("truncated PLAIN BOOL stream")
        out = []
        for b in data[pos:end]:
            if b > 1:
                raise CorruptChunk(f"bad BOOL byte {b}")
            out.append(b == 1)
        return out, end
    out = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise CorruptChunk("truncated BYTES length")
        (n,) = _U32.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise CorruptChunk("truncated BYTES value")
        out.append(data[pos:pos + n])
        pos += n
    return out, pos


# -- column encode / decode -------------------------------------------------------

def encode_column(values: Sequence[Any], physical_type: str, encoding: Encoding) -> bytes:
    """Encode one column chunk; layouts are bit-exact per the module docstring."""
    if encoding == Encoding.DELTA and physical_type != INT64:
        raise IllegalEncoding(physical_type, encoding.name)

    if encoding == Encoding.PLAIN:
        return _encode_plain(values, physical_type)

    if encoding == Encoding.RLE:
        out = bytearray()
        i = 0
        n = len(values)
        while i < n:
            j = i
            while j < n and values[j] == values[i]:
                j += 1
            out += _U32.pack(j - i)
            out += _encode_plain(values[i:i + 1], physical_type)
            i = j
        return bytes(out)

    if encoding == Encoding.DICT:
        index: dict[Any, int] = {}
        order = []
        codes = []
        for v in values:
            key = bytes(v) if physical_type == BYTES else v
            code = index.get(key)
            if code is None:
                code = len(order)
                index[key] = code
                order.append(v)
            codes.append(code)
        return (
            _U32.pack(len(order))
            + _encode_plain(order, physical_type)
            + struct.pack(f"<{len(codes)}I", *codes)
        )

    # DELTA
    if not values:
        return b""
    out = bytearray(_I64.pack(values[0]))
    prev = values[0]
    for v in values[1:]:
        _varint_encode(_zigzag(_wrap_i64(v - prev)), out)
        prev = v
    return bytes(out)


def decode_column(data: bytes, physical_type: str, encoding: Encoding, value_count: int) -> list:
    """Exact inverse of encode_column; CorruptChunk on any malformed input."""
    if encoding == Encoding.DELTA and physical_type != INT64:
        raise IllegalEncoding(physical_type, encoding.name)

    if encoding == Encoding.PLAIN:
        values, pos = _decode_plain(data, physical_type, value_count)

    elif encoding == Encoding.RLE:
        values = []
        pos = 0
        while len(values) < value_count:
            if pos + 4 > len(data):
                raise CorruptChunk("truncated RLE run header")
            (run,) = _U32.unpack_from(data, pos)
            pos += 4
            if run == 0:
                raise CorruptChunk("zero-length RLE run")
            if len(values) + run > value_count:
                raise CorruptChunk("RLE run overshoots value count")
            single, pos = _decode_plain(data, physical_type, 1, pos)
            values.extend(single * run)

    elif encoding == Encoding.DICT:
        if len(data) < 4:
            raise CorruptChunk("truncated DICT header")
        (dict_size,) = _U32.unpack_from(data, 0)
        dictionary, pos = _decode_plain(data, physical_type, dict_size, 4)
        end = pos + 4 * value_count
        if end > len(data):
            raise CorruptChunk("truncated DICT indices")
        codes = struct.unpack_from(f"<{value_count}I", data, pos)
        pos = end
        values = []
        for code in codes:
            if code >= dict_size:
                raise CorruptChunk(f"DICT index {code} >= dict size {dict_size}")
            values.append(dictionary[code])

    else:  # DELTA
        if value_count == 0:
            values, pos = [], 0
        else:
            if len(data) < 8:
                raise CorruptChunk("truncated DELTA first value")
            (prev,) = _I64.unpack_from(data, 0)
            values = [prev]
            pos = 8
            for _ in range(value_count - 1):
                u, pos = _varint_decode(data, pos)
                prev = _wrap_i64(prev + _unzigzag(u))
                values.append(prev)

    if pos != len(data):
        raise CorruptChunk(f"{len(data) - pos} trailing bytes")
    return values


def choose_encoding(values: Sequence[Any], physical_type: str) -> Encoding:
    """Deterministic encoding selection: sorted INT64 -> DELTA; low cardinality
    -> DICT (BYTES) or RLE (INT64/BOOL); otherwise PLAIN."""
    n = len(values)
    if n == 0:
        return Encoding.PLAIN
    if physical_type == INT64 and all(values[i] <= values[i + 1] for i in range(n - 1)):
        return Encoding.DELTA
    distinct = len(set(bytes(v) if physical_type == BYTES else v for v in values))
    if distinct <= max(1, n // 10):
        return Encoding.DICT if physical_type == BYTES else Encoding.RLE
    return Encoding.PLAIN


# -- stats ----------------------------------------------------------------------------

def _column_stats(values: Sequence[Any], physical_type: str) -> tuple[Any, Any]:
    lo, hi = min(values), max(values)
    if physical_type == BYTES:
        return bytes(lo[:STATS_TRUNCATE_BYTES]), bytes(hi[:STATS_TRUNCATE_BYTES])
    return lo, hi


def _stat_to_json(value: Any, physical_type: str) -> Any:
    if physical_type == BYTES:
        return value.decode("latin-1")
    return value


def _stat_from_json(value: Any, physical_type: str) -> Any:
    if physical_type == BYTES:
        return value.encode("latin-1")
    return value


# -- file writer ---------------------------------------------------------------------------

def write_file(
    rows: Sequence[Sequence[Any]],
    schema: Sequence[ColumnSchema],
    writer: str = DEFAULT_WRITER,
) -> bytes:
    """Serialize rows to a complete .brcl file; byte-identical across runs."""
    names = set()
    for col in schema:
        col.validate()
        if col.name in names:
            raise ValueError(f"duplicate column name {col.name!r}")
        names.add(col.name)
    if not rows:
        raise SchemaViolation(0, "", "row_count must be >= 1")

    columns: list[list[Any]] = [[] for _ in schema]
    for r, row in enumerate(rows):
        if len(row) != len(schema):
            raise SchemaViolation(r, "", f"row {r} has {len(row)} cells, schema has {len(schema)}")
        for c, col in enumerate(schema):
            v = row[c]
            if not _check_value(v, col.physical_type):
                raise SchemaViolation(r, col.name)
            columns[c].append(v)

    parts = [MAGIC]
    offset = len(MAGIC)
    chunks = []
    for col, values in zip(schema, columns):
        encoding = choose_encoding(values, col.physical_type)
        encoded = encode_column(values, col.physical_type, encoding)
        lo, hi = _column_stats(values, col.physical_type)
        chunks.append(
            {
                "byte_length": len(encoded),
                "byte_offset": offset,
                "crc32c": crc32c(encoded),
                "encoding": encoding.name,
                "max": _stat_to_json(hi, col.physical_type),
                "min": _stat_to_json(lo, col.physical_type),
                "value_count": len(values),
            }
        )
        parts.append(encoded)
        offset += len(encoded)

    footer = {
        "chunks": chunks,
        "codec": "none",
        "format_version": FORMAT_VERSION,
        "row_count": len(rows),
        "schema": [{"name": c.name, "physical_type": c.physical_type} for c in schema],
        "writer": writer,
    }
    footer_bytes = json.dumps(footer, sort_keys=True, separators=(",", ":")).encode()
    parts.append(footer_bytes)
    parts.append(_U32.pack(len(footer_bytes)))
    parts.append(MAGIC)
    return b"".join(parts)


# -- file reader ---------------------------------------------------------------------------

@dataclass
class ParsedFile:
    columns: dict[str, list]
    footer: FileFooter

    def rows(self) -> list[tuple]:
        """Row tuples over the decoded columns, in decoded column order."""
        return list(zip(*self.columns.values())) if self.columns else []


def read_file_via(
    fetch: Callable[[int, int], bytes],
    size: int,
    projection: Sequence[str] | None = None,
) -> ParsedFile:
    """Read via a byte-range fetcher, touching only the projected chunks'
    ranges plus magics and footer."""
    if size < 2 * len(MAGIC) + 4:
        raise BadMagic("file too small")
    if fetch(0, 4) != MAGIC:
        raise BadMagic("bad leading magic")
    tail = fetch(size - 8, 8)
    if tail[4:] != MAGIC:
        raise BadMagic("bad trailing magic")
    (footer_len,) = _U32.unpack(tail[:4])
    footer_start = size - 8 - footer_len
    if footer_start < len(MAGIC):
        raise FooterCorrupt(f"footer length {footer_len} exceeds file")
    try:
        footer_obj = json.loads(fetch(footer_start, footer_len).decode())
        schema = [ColumnSchema(c["name"], c["physical_type"]) for c in footer_obj["schema"]]
        chunks = [
            ColumnChunk(
                encoding=Encoding[c["encoding"]],
                value_count=c["value_count"],
                byte_offset=c["byte_offset"],
                byte_length=c["byte_length"],
                crc32c=c["crc32c"],
                min=_stat_from_json(c["min"], s.physical_type),
                max=_stat_from_json(c["max"], s.physical_type),
            )
            for c, s in zip(footer_obj["chunks"], schema)
        ]
        footer = FileFooter(
            format_version=footer_obj["format_version"],
            row_count=footer_obj["row_count"],
            schema=schema,
            chunks=chunks,
            writer=footer_obj["writer"],
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise FooterCorrupt(f"unparseable footer: {exc}")
    if footer.format_version != FORMAT_VERSION:
        raise FooterCorrupt(f"unsupported format version {footer.format_version}")
    if len(footer.chunks) != len(footer.schema):
        raise FooterCorrupt("chunk count does not match schema")
    if any(c.value_count != footer.row_count for c in footer.chunks):
        raise FooterCorrupt("chunk value counts disagree with row count")

    by_name = {s.name: i for i, s in enumerate(footer.schema)}
    if projection is None:
        wanted = [s.name for s in footer.schema]
    else:
        unknown = [n for n in projection if n not in by_name]
        if unknown:
            raise FooterCorrupt(f"projected columns not in schema: {unknown}")
        wanted = list(projection)

    columns: dict[str, list] = {}
    for name in wanted:
        i = by_name[name]
        chunk, col = footer.chunks[i], footer.schema[i]
        encoded = fetch(chunk.byte_offset, chunk.byte_length)
        if crc32c(encoded) != chunk.crc32c:
            raise ChecksumMismatch(name)
        columns[name] = decode_column(encoded, col.physical_type, chunk.encoding, chunk.value_count)
    return ParsedFile(columns=columns, footer=footer)


def read_file(data: bytes, projection: Sequence[str] | None = None) -> ParsedFile:
    """In-memory variant of read_file_via."""
    return read_file_via(lambda off, length: data[off:off + length], len(data), projection)
