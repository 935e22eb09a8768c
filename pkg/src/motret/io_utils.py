"""Low-level binary container helpers shared by the on-disk formats.

All formats are little-endian and fail closed: a short read, a bad magic,
or an inconsistent header raises :class:`FormatError` without returning a
partially parsed object.
"""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """A file does not match its binary format."""


def read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def expect_magic(f: BinaryIO, magic: bytes) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def read_u16(f: BinaryIO, what: str) -> int:
    return struct.unpack("<H", read_exact(f, 2, what))[0]


def read_u32(f: BinaryIO, what: str) -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def read_f32(f: BinaryIO, what: str) -> float:
    return struct.unpack("<f", read_exact(f, 4, what))[0]


def write_u16(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<H", value))


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def write_f32(f: BinaryIO, value: float) -> None:
    f.write(struct.pack("<f", value))


def read_f32_array(f: BinaryIO, count: int, what: str) -> np.ndarray:
    """Read `count` little-endian float32 values as a 1-D array."""
    raw = read_exact(f, 4 * count, what)
    return np.frombuffer(raw, dtype="<f4").copy()


def write_f32_array(f: BinaryIO, values: np.ndarray) -> None:
    f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_string(f: BinaryIO, what: str) -> str:
    length = read_u16(f, f"{what} length")
    raw = read_exact(f, length, what)
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{what} is not valid UTF-8") from exc


def write_string(f: BinaryIO, value: str) -> None:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"string too long for u16 length prefix: {len(raw)} bytes")
    write_u16(f, len(raw))
    f.write(raw)


def expect_eof(f: BinaryIO) -> None:
    extra = f.read(1)
    if extra:
        raise FormatError("trailing bytes after payload")
