"""Length-prefixed binary record logs with per-record CRC32C checksums.

Frame layout (little-endian):

    u32  body length (type byte + payload)
    u8   record type
    ...  payload
    u32  CRC32C over type byte + payload

Used by the store for graph.log, segments.log, and profiles.log; the
payload layouts are documented in docs/format.md.
"""

from __future__ import annotations

import struct
from typing import Iterator

_CRC_POLY = 0x82F63B78  # CRC32C (Castagnoli), reflected


def _make_table() -> list[int]:
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC_POLY if crc & 1 else crc >> 1
        table.append(crc)
    return table


_TABLE = _make_table()


def crc32c(data: bytes, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFF
    for b in data:
        crc = _TABLE[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


class LogCorruptionError(Exception):
    def __init__(self, path, offset: int, reason: str):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: corrupt record at byte offset {offset}: {reason}")


_LEN = struct.Struct("<I")


def encode_record(rtype: int, payload: bytes) -> bytes:
    body = bytes([rtype]) + payload
    return _LEN.pack(len(body)) + body + _LEN.pack(crc32c(body))


class LogWriter:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "wb")

    def write(self, rtype: int, payload: bytes):
        self._fh.write(encode_record(rtype, payload))

    def close(self):
        self._fh.flush()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path) -> Iterator[tuple[int, bytes]]:
    """Yield (type, payload) pairs; raises LogCorruptionError with the
    byte offset of the offending record on truncation or checksum mismatch.
    A missing file reads as empty."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        return
    pos = 0
    total = len(data)
    while pos < total:
        start = pos
        if pos + 4 > total:
            raise LogCorruptionError(path, start, "truncated length prefix")
        (length,) = _LEN.unpack_from(data, pos)
        pos += 4
        if length < 1:
            raise LogCorruptionError(path, start, "empty record body")
        if pos + length + 4 > total:
            raise LogCorruptionError(path, start, "truncated record body")
        body = data[pos:pos + length]
        pos += length
        (stored,) = _LEN.unpack_from(data, pos)
        pos += 4
        if crc32c(body) != stored:
            raise LogCorruptionError(path, start, "checksum mismatch")
        yield body[0], body[1:]
