"""Named float32 arrays in one ``.mmnr`` file (maps, banks, fusion heads).

Layout::

    b"MMNA" | version u16 | count u32
    | per array: name_len u16 | name utf-8 | ndim u8 | dims u32[ndim] | f32 data

Same float-blob convention as bundles: little-endian, row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .bundle import BundleError, MagicMismatch, MalformedHeader, TruncatedBlob, UnsupportedVersion

MAGIC = b"MMNA"
VERSION = 1


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, a in arrays.items():
        a = np.asarray(a, dtype="<f4")  # tobytes() is row-major; ascontiguousarray would turn 0-d into 1-d
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def decode_arrays(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise MagicMismatch(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < 10:
        raise MalformedHeader("archive header truncated")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"archive version {version}")
    pos = 10
    out: dict[str, np.ndarray] = {}

    def need(n: int, what: str):
        if pos + n > len(data):
            raise TruncatedBlob(f"{what}: need {n} bytes at offset {pos}")

    for _ in range(count):
        need(2, "name length")
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        need(klen + 1, "name")
        try:
            name = data[pos:pos + klen].decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedHeader(f"array name is not utf-8: {e}") from None
        pos += klen
        ndim = data[pos]
        pos += 1
        need(4 * ndim, "dims")
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        need(nbytes, f"array {name!r}")
        out[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(data):
        raise BundleError(f"{len(data) - pos} trailing bytes in archive")
    return out


def save_arrays(path, **arrays) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_arrays(arrays))


def load_arrays(path) -> dict[str, np.ndarray]:
    return decode_arrays(Path(path).read_bytes())
