"""Recovered encoding database and its file format.

Absolute PIP positions are never stored. Each switch-matrix type keeps a
distance vector per PIP, relative to one reference PIP, and each switch
matrix keeps the absolute positions of that reference PIP:

    pos(sm, pip)[i] = reference(sm)[min(i, len(reference) - 1)] + distance(type(sm), pip)[i]

so PIPs with more bits than the reference extend from its last position.

File layout (little-endian): "MBDB" | version u16 | sections | crc32 u32,
each section being tag (4 bytes) | payload length u32 | payload:

    META  device str | frame_bits u32 | n u32 | (x u16, y u16, type u16)*n
    TYPS  n u16 | (type u16, ref_src str, ref_sink str, m u32,
                   (src str, sink str, k u16, distance i32*k)*m)*n
    REFS  n u32 | (x u16, y u16, k u16, position u32*k)*n
    DFLT  n u32 | (type u16, src str, sink str)*n
    LUTS  n u32 | (x u16, y u16, slice u8, lut u8, k u16, position u32*k)*n
    FFS_  n u32 | (x u16, y u16, slice u8, ff u8, position u32)*n
    SLCS  n u32 | (x u16, y u16, slice u8, position u32)*n

where str is a u16 byte length followed by UTF-8.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from bitrev.exceptions import DatabaseFormatError

Coord = tuple[int, int]
Pip = tuple[str, str]
PipKey = tuple[Coord, str, str]
SliceKey = tuple[Coord, int]
LutKey = tuple[Coord, int, int]

MAGIC = b"MBDB"
VERSION = 1
SECTION_ORDER = (b"META", b"TYPS", b"REFS", b"DFLT", b"LUTS", b"FFS_", b"SLCS")


def distance_vector(positions, reference) -> tuple[int, ...]:
    positions = sorted(positions)
    return tuple(p - reference[min(i, len(reference) - 1)] for i, p in enumerate(positions))


def reconstruct_positions(reference, distances) -> tuple[int, ...]:
    return tuple(reference[min(i, len(reference) - 1)] + d for i, d in enumerate(distances))


@dataclass
class TypeEntry:
    reference_pip: Pip
    distances: dict[Pip, tuple[int, ...]]
    defaults: set[Pip] = field(default_factory=set)


@dataclass
class EncodingDatabase:
    device_id: str
    frame_bits: int = 0
    sm_types: dict[Coord, int] = field(default_factory=dict)
    types: dict[int, TypeEntry] = field(default_factory=dict)
    references: dict[Coord, tuple[int, ...]] = field(default_factory=dict)
    lut_map: dict[LutKey, tuple[int, ...]] = field(default_factory=dict)
    ff_map: dict[LutKey, int] = field(default_factory=dict)
    slice_map: dict[SliceKey, int] = field(default_factory=dict)

    def pip_positions(self, sm: Coord, pip: Pip) -> tuple[int, ...]:
        entry = self.types[self.sm_types[sm]]
        if pip in entry.defaults:
            return ()
        return reconstruct_positions(self.references[sm], entry.distances[pip])

    def knows_pip(self, sm: Coord, pip: Pip) -> bool:
        if sm not in self.sm_types or sm not in self.references:
            return False
        entry = self.types[self.sm_types[sm]]
        return pip in entry.distances or pip in entry.defaults

    def is_default(self, sm: Coord, pip: Pip) -> bool:
        return pip in self.types[self.sm_types[sm]].defaults

    def pips_on_sink(self, sm: Coord, sink: str) -> list[Pip]:
        return self._sinks[self.sm_types[sm]].get(sink, [])

    @cached_property
    def _sinks(self) -> dict[int, dict[str, list[Pip]]]:
        out: dict[int, dict[str, list[Pip]]] = {}
        for type_id, entry in self.types.items():
            per_sink = out.setdefault(type_id, {})
            for pip in sorted(set(entry.distances) | entry.defaults):
                per_sink.setdefault(pip[1], []).append(pip)
        return out

    @cached_property
    def positions(self) -> dict[PipKey, tuple[int, ...]]:
        """Absolute positions of every non-default PIP of every reversed switch matrix."""
        table = {}
        for sm in sorted(self.references):
            ref = self.references[sm]
            entry = self.types[self.sm_types[sm]]
            for pip, dist in entry.distances.items():
                table[(sm, pip[0], pip[1])] = reconstruct_positions(ref, dist)
        return table

    @cached_property
    def bit_index(self) -> dict[int, list[PipKey]]:
        """Absolute bit -> PIPs owning it; every (bit, PIP) pair listed once."""
        index: dict[int, list[PipKey]] = {}
        for key in sorted(self.positions):
            for bit in self.positions[key]:
                index.setdefault(bit, []).append(key)
        return index

    @cached_property
    def logic_index(self) -> dict[int, tuple]:
        """Absolute bit -> owning logic object ("LUT", key, entry) / ("FF", key) / ("SLICE", key)."""
        index: dict[int, tuple] = {}
        for key, bits in self.lut_map.items():
            for i, bit in enumerate(bits):
                index[bit] = ("LUT", key, i)
        for key, bit in self.ff_map.items():
            index[bit] = ("FF", key)
        for key, bit in self.slice_map.items():
            index[bit] = ("SLICE", key)
        return index


# --- Codec ---

class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def pack(self, fmt: str, *values) -> None:
        self.buf += struct.pack("<" + fmt, *values)

    def string(self, text: str) -> None:
        data = text.encode("utf-8")
        self.pack("H", len(data))
        self.buf += data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.offset + size > len(self.data):
            raise DatabaseFormatError("truncated database file")
        values = struct.unpack_from("<" + fmt, self.data, self.offset)
        self.offset += size
        return values if len(values) > 1 else values[0]

    def vector(self, code: str, k: int) -> tuple[int, ...]:
        size = struct.calcsize(f"<{k}{code}")
        if self.offset + size > len(self.data):
            raise DatabaseFormatError("truncated database file")
        values = struct.unpack_from(f"<{k}{code}", self.data, self.offset)
        self.offset += size
        return tuple(values)

    def raw(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DatabaseFormatError("truncated database file")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def string(self) -> str:
        raw = self.raw(self.unpack("H"))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DatabaseFormatError(f"string at byte {self.offset - len(raw)} is not UTF-8") from e

    @property
    def done(self) -> bool:
        return self.offset == len(self.data)


def _sections(db: EncodingDatabase) -> dict[bytes, bytes]:
    out = {}

    w = _Writer()
    w.string(db.device_id)
    w.pack("I", db.frame_bits)
    w.pack("I", len(db.sm_types))
    for (x, y), type_id in sorted(db.sm_types.items()):
        w.pack("HHH", x, y, type_id)
    out[b"META"] = w.buf

    w = _Writer()
    w.pack("H", len(db.types))
    for type_id, entry in sorted(db.types.items()):
        w.pack("H", type_id)
        w.string(entry.reference_pip[0])
        w.string(entry.reference_pip[1])
        w.pack("I", len(entry.distances))
        for (src, sink), dist in sorted(entry.distances.items()):
            w.string(src)
            w.string(sink)
            w.pack("H", len(dist))
            w.pack(f"{len(dist)}i", *dist)
    out[b"TYPS"] = w.buf

    w = _Writer()
    w.pack("I", len(db.references))
    for (x, y), ref in sorted(db.references.items()):
        w.pack("HHH", x, y, len(ref))
        w.pack(f"{len(ref)}I", *ref)
    out[b"REFS"] = w.buf

    w = _Writer()
    defaults = sorted((t, pip) for t, entry in db.types.items() for pip in entry.defaults)
    w.pack("I", len(defaults))
    for type_id, (src, sink) in defaults:
        w.pack("H", type_id)
        w.string(src)
        w.string(sink)
    out[b"DFLT"] = w.buf

    w = _Writer()
    w.pack("I", len(db.lut_map))
    for ((x, y), s, lut), bits in sorted(db.lut_map.items()):
        w.pack("HHBBH", x, y, s, lut, len(bits))
        w.pack(f"{len(bits)}I", *bits)
    out[b"LUTS"] = w.buf

    w = _Writer()
    w.pack("I", len(db.ff_map))
    for ((x, y), s, ff), bit in sorted(db.ff_map.items()):
        w.pack("HHBBI", x, y, s, ff, bit)
    out[b"FFS_"] = w.buf

    w = _Writer()
    w.pack("I", len(db.slice_map))
    for ((x, y), s), bit in sorted(db.slice_map.items()):
        w.pack("HHBI", x, y, s, bit)
    out[b"SLCS"] = w.buf
    return out


def encode_database(db: EncodingDatabase) -> bytes:
    body = bytearray(MAGIC)
    body += struct.pack("<H", VERSION)
    for tag, payload in _sections(db).items():
        body += tag + struct.pack("<I", len(payload)) + payload
    return bytes(body) + struct.pack("<I", zlib.crc32(body))


def decode_database(data: bytes) -> EncodingDatabase:
    if data[:4] != MAGIC:
        raise DatabaseFormatError("not an encoding database (bad magic)")
    if len(data) < 10:
        raise DatabaseFormatError("truncated database file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.raw(4)
    version = r.unpack("H")
    if version != VERSION:
        raise DatabaseFormatError(f"unsupported database version {version}, expected {VERSION}")
    if zlib.crc32(body) != crc:
        raise DatabaseFormatError("checksum mismatch")
    sections: dict[bytes, _Reader] = {}
    while not r.done:
        tag = r.raw(4)
        if tag not in SECTION_ORDER or tag in sections:
            raise DatabaseFormatError(f"unexpected section {tag!r}")
        sections[tag] = _Reader(r.raw(r.unpack("I")))
    missing = [t.decode() for t in SECTION_ORDER if t not in sections]
    if missing:
        raise DatabaseFormatError(f"missing sections: {', '.join(missing)}")

    s = sections[b"META"]
    db = EncodingDatabase(device_id=s.string(), frame_bits=s.unpack("I"))
    for _ in range(s.unpack("I")):
        x, y, type_id = s.unpack("HHH")
        db.sm_types[(x, y)] = type_id

    s = sections[b"TYPS"]
    for _ in range(s.unpack("H")):
        type_id = s.unpack("H")
        reference = (s.string(), s.string())
        distances = {}
        for _ in range(s.unpack("I")):
            pip = (s.string(), s.string())
            distances[pip] = s.vector("i", s.unpack("H"))
        db.types[type_id] = TypeEntry(reference_pip=reference, distances=distances)

    s = sections[b"REFS"]
    for _ in range(s.unpack("I")):
        x, y, k = s.unpack("HHH")
        db.references[(x, y)] = s.vector("I", k)

    s = sections[b"DFLT"]
    for _ in range(s.unpack("I")):
        type_id = s.unpack("H")
        pip = (s.string(), s.string())
        if type_id not in db.types:
            raise DatabaseFormatError(f"default PIP for unknown SM type {type_id}")
        db.types[type_id].defaults.add(pip)

    s = sections[b"LUTS"]
    for _ in range(s.unpack("I")):
        x, y, sl, lut, k = s.unpack("HHBBH")
        db.lut_map[((x, y), sl, lut)] = s.vector("I", k)

    s = sections[b"FFS_"]
    for _ in range(s.unpack("I")):
        x, y, sl, ff, bit = s.unpack("HHBBI")
        db.ff_map[((x, y), sl, ff)] = bit

    s = sections[b"SLCS"]
    for _ in range(s.unpack("I")):
        x, y, sl, bit = s.unpack("HHBI")
        db.slice_map[((x, y), sl)] = bit

    if not all(sec.done for sec in sections.values()):
        raise DatabaseFormatError("trailing bytes inside a section")
    return db


def save_database(db: EncodingDatabase, path: str | Path) -> None:
    Path(path).write_bytes(encode_database(db))


def load_database(path: str | Path) -> EncodingDatabase:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DatabaseFormatError(f"cannot read {path}: {e}") from e
    return decode_database(data)
