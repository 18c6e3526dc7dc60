"""CRC-32C (Castagnoli) over bytes, pure Python.

Slicing-by-8 table lookup; processes 8 input bytes per loop iteration, which
keeps checksumming of multi-megabyte column chunks well under a second.
"""

from __future__ import annotations

_POLY = 0x82F63B78  # reflected Castagnoli polynomial


def _build_tables() -> list[list[int]]:
    tables = [[0] * 256 for _ in range(8)]
    t0 = tables[0]
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ (_POLY if crc & 1 else 0)
        t0[i] = crc
    for i in range(256):
        crc = t0[i]
        for t in range(1, 8):
            crc = (crc >> 8) ^ t0[crc & 0xFF]
            tables[t][i] = crc
    return tables


_T = _build_tables()


def crc32c(data: bytes, value: int = 0) -> int:
    """CRC-32C of data, optionally continuing from a previous value."""
    t0, t1, t2, t3, t4, t5, t6, t7 = _T
    crc = value ^ 0xFFFFFFFF
    n = len(data)
    end8 = n - (n & 7)
    i = 0
    while i < end8:
        b0, b1, b2, b3, b4, b5, b6, b7 = data[i:i + 8]
        crc ^= b0 | (b1 << 8) | (b2 << 16) | (b3 << 24)
        crc = (
            t7[crc & 0xFF]
            ^ t6[(crc >> 8) & 0xFF]
            ^ t5[(crc >> 16) & 0xFF]
            ^ t4[crc >> 24]
            ^ t3[b4]
            ^ t2[b5]
            ^ t1[b6]
            ^ t0[b7]
        )
        i += 8
    for b in data[end8:]:
        crc = (crc >> 8) ^ t0[(crc ^ b) & 0xFF]
    return crc ^ 0xFFFFFFFF
