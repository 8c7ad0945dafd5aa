import struct

import pytest

from modelytics.records import (
    LogCorruptionError, LogWriter, crc32c, read_records)


class TestCrc32c:
    def test_known_vector(self):
        # public Castagnoli check value
        assert crc32c(b"123456789") == 0xE3069283

    def test_empty(self):
        assert crc32c(b"") == 0

    def test_differs_from_zip_crc(self):
        import zlib
        assert crc32c(b"123456789") != zlib.crc32(b"123456789")


class TestRoundTrip:
    def test_write_read(self, tmp_path):
        path = tmp_path / "x.log"
        payloads = [(1, b"hello"), (200, b""), (7, bytes(range(256)))]
        with LogWriter(path) as log:
            for rtype, payload in payloads:
                log.write(rtype, payload)
        assert list(read_records(path)) == payloads

    def test_missing_file_yields_nothing(self, tmp_path):
        assert list(read_records(tmp_path / "absent.log")) == []


class TestCorruption:
    def _write_one(self, path):
        with LogWriter(path) as log:
            log.write(3, b"aaaa")
            log.write(3, b"bbbb")

    def test_flipped_byte_names_offset(self, tmp_path):
        path = tmp_path / "x.log"
        self._write_one(path)
        data = bytearray(path.read_bytes())
        first_len = 4 + 1 + 4 + 4  # len + type + payload + crc
        data[first_len + 6] ^= 0xFF  # inside the second record
        path.write_bytes(bytes(data))
        out = []
        with pytest.raises(LogCorruptionError) as exc:
            for rec in read_records(path):
                out.append(rec)
        assert out == [(3, b"aaaa")]
        assert exc.value.offset == first_len

    def test_truncated_tail(self, tmp_path):
        path = tmp_path / "x.log"
        self._write_one(path)
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(LogCorruptionError):
            list(read_records(path))

    def test_absurd_length_rejected(self, tmp_path):
        path = tmp_path / "x.log"
        path.write_bytes(struct.pack("<I", 0xFFFF_FFF0) + b"xx")
        with pytest.raises(LogCorruptionError):
            list(read_records(path))
