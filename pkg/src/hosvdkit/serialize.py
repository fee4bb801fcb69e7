"""Little-endian binary container shared by the model and network files.

Layout: magic (4 bytes), u32 format version, format-specific body, then a
trailing CRC32 (zlib polynomial) of every preceding byte. All integers are
little-endian; float payloads are raw little-endian IEEE-754 doubles, so
files are bit-exact across platforms.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)

MODEL_MAGIC = b"HSVD"
NETWORK_MAGIC = b"HCNN"
FORMAT_VERSION = 1


class ByteWriter:
    """Accumulates the body of a container; ``finish`` appends the CRC."""

    def __init__(self, magic: bytes, version: int = FORMAT_VERSION):
        self._parts = [magic, struct.pack("<I", version)]

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack("<Q", v))

    def f64_block(self, arr: np.ndarray) -> None:
        """u64 byte length followed by the raw doubles, C order."""
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        self.u64(len(payload))
        self._parts.append(payload)

    def finish(self) -> bytes:
        body = b"".join(self._parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class ByteReader:
    """Sequential reader that raises the distinct format errors."""

    def __init__(self, data: bytes, magic: bytes, version: int = FORMAT_VERSION):
        self._data = data
        self._pos = 0
        head = self._take(len(magic), "magic")
        if head != magic:
            raise BadMagicError(f"expected magic {magic!r}, found {head!r}")
        got = self.u32()
        if got != version:
            raise UnsupportedVersionError(f"unsupported format version {got}")

    def _take(self, n: int, what: str) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedFileError(
                f"file ends inside {what}: need {n} bytes at offset {self._pos}"
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1, "u8"))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4, "u32"))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8, "u64"))[0]

    def f64_block(self) -> np.ndarray:
        n = self.u64()
        if n % 8 != 0:
            raise TruncatedFileError(f"float payload length {n} is not a multiple of 8")
        raw = self._take(n, "float payload")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def finish(self) -> None:
        """Consume the CRC trailer; everything before it must match."""
        body_end = self._pos
        stored = struct.unpack("<I", self._take(4, "crc32 trailer"))[0]
        actual = zlib.crc32(self._data[:body_end]) & 0xFFFFFFFF
        if stored != actual:
            raise ChecksumMismatchError(
                f"stored crc32 {stored:08x} != computed {actual:08x}"
            )
        if self._pos != len(self._data):
            raise ChecksumMismatchError(
                f"{len(self._data) - self._pos} unexpected bytes after crc32 trailer"
            )
