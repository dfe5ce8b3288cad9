import struct
import zlib

import numpy as np
import pytest

from bitrev.exceptions import BitstreamFormatError
from bitrev.modules.bitstream import (
    SYNC_WORD,
    Bitstream,
    bitstream_read,
    bitstream_write,
    decode_bitstream,
    encode_bitstream,
)


def test_positions_and_diff():
    a = Bitstream.from_positions("dev", 64, [3, 17, 40])
    b = a.with_bits(set_bits=[5], clear_bits=[17])
    assert list(a.set_positions()) == [3, 17, 40]
    assert list(b.set_positions()) == [3, 5, 40]
    assert list(a.diff_positions(b)) == [5, 17]
    assert b.is_set(5) and not b.is_set(17)
    assert a.frame_bits == 64


def test_header_carries_sync_word(tmp_path):
    bs = Bitstream.from_positions("dev", 32, [1])
    assert bs.header[bs.sync_word_pos // 8:].startswith(SYNC_WORD)
    bitstream_write(bs, tmp_path / "a.bit")
    again = bitstream_read(tmp_path / "a.bit")
    assert again == bs
    assert again.sync_word_pos == bs.sync_word_pos


def test_corruption_is_detected():
    data = bytearray(encode_bitstream(Bitstream.from_positions("dev", 32, [1, 2])))
    data[-6] ^= 0x01
    with pytest.raises(BitstreamFormatError, match="checksum"):
        decode_bitstream(bytes(data))
    with pytest.raises(BitstreamFormatError):
        decode_bitstream(b"MBIT\x01")
    with pytest.raises(BitstreamFormatError, match="magic"):
        decode_bitstream(b"XXXX" + bytes(16))


def test_mismatched_bitstreams_cannot_be_diffed():
    with pytest.raises(BitstreamFormatError):
        Bitstream.blank("dev", 32).diff_positions(Bitstream.blank("dev", 64))
    with pytest.raises(BitstreamFormatError):
        Bitstream.blank("dev", 32).diff_positions(Bitstream.blank("other", 32))


def test_out_of_range_bits():
    bs = Bitstream.blank("dev", 16)
    with pytest.raises(BitstreamFormatError):
        bs.with_bits(set_bits=[16])
    with pytest.raises(BitstreamFormatError):
        bs.is_set(-1)


def test_random_bitstreams_survive_the_file(tmp_path):
    rng = np.random.default_rng(50)
    for k in range(50):
        frame_bits = int(rng.integers(1, 4096))
        positions = rng.choice(frame_bits, size=int(rng.integers(0, frame_bits)), replace=False)
        pad = int(rng.integers(0, 12))
        bs = Bitstream.from_positions(f"dev{k}", frame_bits, positions.tolist())
        bs = Bitstream(bs.device_id, bs.frames, header=b"\xff" * pad + SYNC_WORD, sync_word_pos=8 * pad)
        bitstream_write(bs, tmp_path / f"{k}.bit")
        assert bitstream_read(tmp_path / f"{k}.bit") == bs


def test_empty_frames_make_a_minimal_file(tmp_path):
    bs = Bitstream.blank("dev", 0)
    data = encode_bitstream(bs)
    assert len(data) == 4 + 2 + 2 + 3 + 4 + len(bs.header) + 4 + 4
    assert decode_bitstream(data) == bs
    assert decode_bitstream(data).set_positions().size == 0


def test_device_id_must_be_utf8():
    data = encode_bitstream(Bitstream.blank("dev", 8))
    body = data[:8] + b"\xff\xfe\xfd" + data[11:-4]
    with pytest.raises(BitstreamFormatError, match="UTF-8"):
        decode_bitstream(body + struct.pack("<I", zlib.crc32(body)))
