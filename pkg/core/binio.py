"""
Little-endian binary helpers for the corpus and checkpoint containers.

Container envelope (both formats):
  magic (4 bytes) | version u16 | header length u32 | header JSON (UTF-8)
  | payload ... | CRC32 u32 over every preceding byte
"""

from __future__ import annotations
import json
import struct
import zlib

import numpy as np

from core.errors import FormatError


class BinaryWriter:
    def __init__(self):
        self._chunks: list[bytes] = []

    def pack(self, fmt: str, *values):
        self._chunks.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes):
        self._chunks.append(data)

    def array(self, values: np.ndarray, dtype: str):
        self._chunks.append(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def header(self, magic: bytes, version: int, meta: dict):
        blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        self.raw(magic)
        self.pack("HI", version, len(blob))
        self.raw(blob)

    def finish(self) -> bytes:
        body = b"".join(self._chunks)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class BinaryReader:
    """Cursor over a byte buffer; every read failure reports its byte offset."""

    def __init__(self, data: bytes, error: type[FormatError] = FormatError):
        self.data = data
        self.offset = 0
        self.error = error

    def _need(self, n: int, what: str):
        if self.offset + n > len(self.data):
            raise self.error(f"truncated file while reading {what}", offset=self.offset)

    def unpack(self, fmt: str, what: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        self._need(size, what)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values if len(values) > 1 else values[0]

    def raw(self, n: int, what: str) -> bytes:
        self._need(n, what)
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def array(self, count: int, dtype: str, what: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        self._need(size, what)
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset).copy()
        self.offset += size
        return out

    def header(self, magic: bytes, versions: tuple[int, ...]) -> dict:
        """Read the envelope head; the checksum is verified before anything past the version."""
        found = self.raw(len(magic), "magic")
        if found != magic:
            raise self.error(f"bad magic {found!r}, expected {magic!r}", offset=0)
        version = self.unpack("H", "version")
        if version not in versions:
            raise self.error(f"unsupported format version {version}", offset=self.offset - 2)
        self.verify_checksum()
        length = self.unpack("I", "header length")
        start = self.offset
        try:
            return json.loads(self.raw(length, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise self.error(f"unreadable header block: {e}", offset=start) from None

    def verify_checksum(self):
        """Check the CRC32 trailer against every byte before it."""
        end = len(self.data) - 4
        if end < self.offset:
            raise self.error("truncated file while reading checksum", offset=self.offset)
        stored = struct.unpack_from("<I", self.data, end)[0]
        actual = zlib.crc32(self.data[:end]) & 0xFFFFFFFF
        if stored != actual:
            raise self.error(f"checksum mismatch (stored {stored:08x}, computed {actual:08x})", offset=end)

    def verify_trailer(self):
        """Expect exactly the CRC32 trailer to remain after the payload."""
        remaining = len(self.data) - self.offset
        if remaining < 4:
            raise self.error("truncated file while reading checksum", offset=self.offset)
        if remaining > 4:
            raise self.error(f"{remaining - 4} unexpected trailing byte(s)", offset=self.offset)
