"""Bitstream container and its file codec.

File layout, all integers little-endian:

    "MBIT" | version u16 | device_id (u16 length + UTF-8) |
    header_len u32 | header | frames_len u32 | frames | crc32 u32

The CRC covers every byte before it. Configuration bit b lives in
frames[b // 8], bit b % 8 (LSB first).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from bitrev.exceptions import BitstreamFormatError

MAGIC = b"MBIT"
VERSION = 1
SYNC_WORD = bytes.fromhex("aa995566")
# dummy pad words and a bus-width detect pattern ahead of the sync word
HEADER_PREAMBLE = b"\xff" * 8 + bytes.fromhex("000000bb11220044")
DEFAULT_HEADER = HEADER_PREAMBLE + SYNC_WORD


@dataclass(frozen=True)
class Bitstream:
    device_id: str
    frames: bytes
    header: bytes = DEFAULT_HEADER
    sync_word_pos: int = field(default=8 * len(HEADER_PREAMBLE))

    def __post_init__(self):
        if self.header.count(SYNC_WORD) != 1:
            raise BitstreamFormatError("header must contain the sync word exactly once")
        if self.header.find(SYNC_WORD) * 8 != self.sync_word_pos:
            raise BitstreamFormatError(f"sync word not at bit offset {self.sync_word_pos}")

    @classmethod
    def blank(cls, device_id: str, frame_bits: int) -> Bitstream:
        return cls(device_id=device_id, frames=bytes((frame_bits + 7) // 8))

    @classmethod
    def from_positions(cls, device_id: str, frame_bits: int, positions: Iterable[int]) -> Bitstream:
        frames = np.zeros((frame_bits + 7) // 8, dtype=np.uint8)
        _apply(frames, positions, set_bits=True)
        return cls(device_id=device_id, frames=frames.tobytes())

    @property
    def frame_bits(self) -> int:
        return 8 * len(self.frames)

    def bit_array(self) -> np.ndarray:
        return np.unpackbits(np.frombuffer(self.frames, dtype=np.uint8), bitorder="little")

    def set_positions(self) -> np.ndarray:
        return np.flatnonzero(self.bit_array())

    def is_set(self, position: int) -> bool:
        if not 0 <= position < self.frame_bits:
            raise BitstreamFormatError(f"bit {position} outside the {self.frame_bits}-bit frame area")
        return bool((self.frames[position >> 3] >> (position & 7)) & 1)

    def with_bits(self, set_bits: Iterable[int] = (), clear_bits: Iterable[int] = ()) -> Bitstream:
        """Copy with the given positions cleared, then the given positions set."""
        frames = np.frombuffer(self.frames, dtype=np.uint8).copy()
        _apply(frames, clear_bits, set_bits=False)
        _apply(frames, set_bits, set_bits=True)
        return Bitstream(self.device_id, frames.tobytes(), self.header, self.sync_word_pos)

    def diff_positions(self, other: Bitstream) -> np.ndarray:
        """Sorted positions where two bitstreams differ."""
        if self.device_id != other.device_id:
            raise BitstreamFormatError(f"device mismatch: {self.device_id} vs {other.device_id}")
        if len(self.frames) != len(other.frames):
            raise BitstreamFormatError(f"frame length mismatch: {len(self.frames)} vs {len(other.frames)} bytes")
        a = np.frombuffer(self.frames, dtype=np.uint8)
        b = np.frombuffer(other.frames, dtype=np.uint8)
        return np.flatnonzero(np.unpackbits(a ^ b, bitorder="little"))


def _apply(frames: np.ndarray, positions: Iterable[int], set_bits: bool) -> None:
    pos = np.fromiter(positions, dtype=np.int64)
    if pos.size == 0:
        return
    if pos.min() < 0 or pos.max() >= 8 * frames.size:
        raise BitstreamFormatError(f"bit position outside the {8 * frames.size}-bit frame area")
    masks = np.left_shift(1, pos & 7).astype(np.uint8)
    if set_bits:
        np.bitwise_or.at(frames, pos >> 3, masks)
    else:
        np.bitwise_and.at(frames, pos >> 3, ~masks)


# --- Files ---

def encode_bitstream(bs: Bitstream) -> bytes:
    device = bs.device_id.encode("utf-8")
    body = b"".join([
        MAGIC,
        struct.pack("<H", VERSION),
        struct.pack("<H", len(device)), device,
        struct.pack("<I", len(bs.header)), bs.header,
        struct.pack("<I", len(bs.frames)), bs.frames,
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def decode_bitstream(data: bytes) -> Bitstream:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BitstreamFormatError("not a bitstream file (bad magic)")
    if len(data) < 4 + 2 + 4:
        raise BitstreamFormatError("truncated bitstream file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    offset = 4

    def take(n):
        nonlocal offset
        if offset + n > len(body):
            raise BitstreamFormatError("truncated bitstream file")
        chunk = body[offset:offset + n]
        offset += n
        return chunk

    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise BitstreamFormatError(f"unsupported bitstream version {version}")
    (n,) = struct.unpack("<H", take(2))
    try:
        device_id = take(n).decode("utf-8")
    except UnicodeDecodeError as e:
        raise BitstreamFormatError("device id is not UTF-8") from e
    (n,) = struct.unpack("<I", take(4))
    header = take(n)
    (n,) = struct.unpack("<I", take(4))
    frames = take(n)
    if offset != len(body):
        raise BitstreamFormatError("trailing bytes after frame data")
    if zlib.crc32(body) != crc:
        raise BitstreamFormatError("checksum mismatch")
    pos = header.find(SYNC_WORD)
    if pos < 0:
        raise BitstreamFormatError("sync word missing from header")
    return Bitstream(device_id=device_id, frames=frames, header=header, sync_word_pos=8 * pos)


def bitstream_write(bs: Bitstream, path: str | Path) -> None:
    Path(path).write_bytes(encode_bitstream(bs))


def bitstream_read(path: str | Path) -> Bitstream:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise BitstreamFormatError(f"cannot read {path}: {e}") from e
    return decode_bitstream(data)
