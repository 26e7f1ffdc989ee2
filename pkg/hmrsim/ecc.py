"""SEC-DED Hamming(39,32) codec for the recovery backup registers.

Codeword layout: bit 0 is the overall parity, bits 1..38 are Hamming
positions. Positions that are powers of two carry parity, the remaining 32
positions carry data bits in ascending order.
"""
from __future__ import annotations

import enum
from typing import NamedTuple

DATA_BITS = 32
CODE_BITS = 39
PARITY_POSITIONS = (1, 2, 4, 8, 16, 32)
DATA_POSITIONS = tuple(p for p in range(1, CODE_BITS) if p & (p - 1))

assert len(DATA_POSITIONS) == DATA_BITS


class EccStatus(str, enum.Enum):
    OK = "ok"
    CORRECTED = "corrected"
    UNCORRECTABLE = "uncorrectable"


class DecodeResult(NamedTuple):
    word: int
    status: EccStatus
    bit: int | None = None


def _parity(value: int) -> int:
    return bin(value).count("1") & 1


def _syndrome(cw: int) -> int:
    s = 0
    for pos in range(1, CODE_BITS):
        if cw >> pos & 1:
            s ^= pos
    return s


def _encode_slow(word: int) -> int:
    cw = 0
    for i, pos in enumerate(DATA_POSITIONS):
        if word >> i & 1:
            cw |= 1 << pos
    s = _syndrome(cw)
    for pos in PARITY_POSITIONS:
        if s & pos:
            cw |= 1 << pos
    return cw | _parity(cw)


# The code is linear: one table of partial codewords per data byte.
_BYTE_TABLES = tuple(
    tuple(_encode_slow(b << (8 * k)) for b in range(256)) for k in range(4)
)


def ecc_encode(word: int) -> int:
    t0, t1, t2, t3 = _BYTE_TABLES
    return t0[word & 0xFF] ^ t1[word >> 8 & 0xFF] ^ t2[word >> 16 & 0xFF] ^ t3[word >> 24 & 0xFF]


def _extract(cw: int) -> int:
    word = 0
    for i, pos in enumerate(DATA_POSITIONS):
        if cw >> pos & 1:
            word |= 1 << i
    return word


def ecc_decode(cw: int) -> DecodeResult:
    cw &= (1 << CODE_BITS) - 1
    syndrome = _syndrome(cw)
    odd = _parity(cw)
    if not syndrome and not odd:
        return DecodeResult(_extract(cw), EccStatus.OK)
    if odd:
        bit = syndrome  # syndrome 0 means the overall parity bit itself
        if bit >= CODE_BITS:
            return DecodeResult(_extract(cw), EccStatus.UNCORRECTABLE)
        return DecodeResult(_extract(cw ^ (1 << bit)), EccStatus.CORRECTED, bit)
    return DecodeResult(_extract(cw), EccStatus.UNCORRECTABLE)
