"""AES-128 (single block, ECB) on numpy state arrays, plus its blackbox model.

The state is a 4x4 uint8 array indexed [row, column]; input byte i lands at
row i % 4, column i // 4.
"""

from __future__ import annotations

import numpy as np

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)
ROUNDS = 10
BLOCK_BYTES = 16


def _gf_mul(a: int, b: int) -> int:
    p = 0
    for _ in range(8):
        if b & 1:
            p ^= a
        hi = a & 0x80
        a = (a << 1) & 0xFF
        if hi:
            a ^= 0x1B
        b >>= 1
    return p


def _gf_inv(a: int) -> int:
    # a^254 is the multiplicative inverse in GF(2^8); 0 maps to 0
    result, base, exp = 1, a, 254
    while exp:
        if exp & 1:
            result = _gf_mul(result, base)
        base = _gf_mul(base, base)
        exp >>= 1
    return result if a else 0


def _rotl8(x: int, n: int) -> int:
    return ((x << n) | (x >> (8 - n))) & 0xFF


def _build_sbox() -> np.ndarray:
    box = np.zeros(256, dtype=np.uint8)
    for x in range(256):
        b = _gf_inv(x)
        box[x] = b ^ _rotl8(b, 1) ^ _rotl8(b, 2) ^ _rotl8(b, 3) ^ _rotl8(b, 4) ^ 0x63
    return box


SBOX = _build_sbox()
INV_SBOX = np.zeros(256, dtype=np.uint8)
INV_SBOX[SBOX] = np.arange(256, dtype=np.uint8)


def _check(name: str, data: bytes) -> None:
    if len(data) != BLOCK_BYTES:
        raise ValueError(f"{name} must be {BLOCK_BYTES} bytes, got {len(data)}")


def bytes_to_state(block: bytes) -> np.ndarray:
    return np.frombuffer(block, dtype=np.uint8).reshape(4, 4).T.copy()


def state_to_bytes(state: np.ndarray) -> bytes:
    return state.T.reshape(16).tobytes()


def xtime(a: np.ndarray) -> np.ndarray:
    return (a << 1) ^ ((a >> 7) * np.uint8(0x1B))


def sub_bytes(state: np.ndarray) -> np.ndarray:
    return SBOX[state]


def inv_sub_bytes(state: np.ndarray) -> np.ndarray:
    return INV_SBOX[state]


def shift_rows(state: np.ndarray) -> np.ndarray:
    return np.stack([np.roll(state[r], -r) for r in range(4)])


def inv_shift_rows(state: np.ndarray) -> np.ndarray:
    return np.stack([np.roll(state[r], r) for r in range(4)])


def mix_columns(state: np.ndarray) -> np.ndarray:
    total = state[0] ^ state[1] ^ state[2] ^ state[3]
    return state ^ total ^ xtime(state ^ np.roll(state, -1, axis=0))


def inv_mix_columns(state: np.ndarray) -> np.ndarray:
    s = state.copy()
    u = xtime(xtime(s[0] ^ s[2]))
    v = xtime(xtime(s[1] ^ s[3]))
    s[0] ^= u
    s[1] ^= v
    s[2] ^= u
    s[3] ^= v
    return mix_columns(s)


def expand_key(key: bytes) -> np.ndarray:
    """Round keys as an (11, 4, 4) array, each laid out like the state."""
    _check("key", key)
    words = np.zeros((4 * (ROUNDS + 1), 4), dtype=np.uint8)
    words[:4] = np.frombuffer(key, dtype=np.uint8).reshape(4, 4)
    for i in range(4, len(words)):
        temp = words[i - 1].copy()
        if i % 4 == 0:
            temp = SBOX[np.roll(temp, -1)]
            temp[0] ^= RCON[i // 4 - 1]
        words[i] = words[i - 4] ^ temp
    return words.reshape(ROUNDS + 1, 4, 4).transpose(0, 2, 1)


def aes128_encrypt(key: bytes, plaintext: bytes) -> bytes:
    _check("plaintext", plaintext)
    round_keys = expand_key(key)
    state = bytes_to_state(plaintext) ^ round_keys[0]
    for r in range(1, ROUNDS):
        state = mix_columns(shift_rows(sub_bytes(state))) ^ round_keys[r]
    state = shift_rows(sub_bytes(state)) ^ round_keys[ROUNDS]
    return state_to_bytes(state)


def aes128_decrypt(key: bytes, ciphertext: bytes) -> bytes:
    _check("ciphertext", ciphertext)
    round_keys = expand_key(key)
    state = inv_sub_bytes(inv_shift_rows(bytes_to_state(ciphertext) ^ round_keys[ROUNDS]))
    for r in range(ROUNDS - 1, 0, -1):
        state = inv_sub_bytes(inv_shift_rows(inv_mix_columns(state ^ round_keys[r])))
    return state_to_bytes(state ^ round_keys[0])


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """128 port bits (index 8 * byte + bit, bit 0 = LSB) to 16 bytes."""
    return np.packbits(bits.astype(np.uint8).reshape(-1, 8), axis=1, bitorder="little").reshape(-1).tobytes()


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")


class Aes128Core:
    """Behavioural AES-128 round core.

    Ports K0..K127 (key), P0..P127 (plaintext) and GO in; C0..C127 out. The
    ciphertext register loads AES_K(P) on every cycle GO is high and is
    visible from the next cycle on.
    """

    input_ports = [f"K{i}" for i in range(128)] + [f"P{i}" for i in range(128)] + ["GO"]
    output_ports = [f"C{i}" for i in range(128)]

    def step(self, inputs: np.ndarray, state: np.ndarray) -> None:
        for lane in np.flatnonzero(inputs[256]):
            key = bits_to_bytes(inputs[0:128, lane])
            plaintext = bits_to_bytes(inputs[128:256, lane])
            state[:, lane] = bytes_to_bits(aes128_encrypt(key, plaintext))
