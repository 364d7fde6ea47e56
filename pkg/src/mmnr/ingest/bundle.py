"""Binary ``.mmnr`` feature bundles.

Layout (all integers little-endian)::

    b"MMNR" | version u16 | H, W, D_rgb, D_pc u32 | flags u8 | label u8
    | id_len u16 | sample_id utf-8
    | rgb patches f32[H*W*D_rgb] | rgb class token f32[D_rgb]   (flag 0x01)
    | pc patches  f32[H*W*D_pc]  | pc class token  f32[D_pc]    (flag 0x02)
    | cloud positions f32[H*W*3]
    | rgb valid bits | pc valid bits | cloud valid bits | gt_mask bits (flag 0x04)

Float blobs are row-major. Bit planes are packed per row, MSB first, each
row padded to ``ceil(W / 8)`` bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..tensor import FeatureGrid, OrganizedPointCloud

MAGIC = b"MMNR"
VERSION = 1

FLAG_RGB_TOKEN = 0x01
FLAG_PC_TOKEN = 0x02
FLAG_GT_MASK = 0x04

NORMAL, ANOMALOUS = "normal", "anomalous"

_HEAD = struct.Struct("<4sH4IBBH")


class BundleError(ValueError):
    pass


class MagicMismatch(BundleError):
    pass


class UnsupportedVersion(BundleError):
    pass


class MalformedHeader(BundleError):
    pass


class TruncatedBlob(BundleError):
    pass


class ShapeMismatch(BundleError):
    pass


class CorruptPayload(BundleError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    rgb_grid: FeatureGrid
    pc_grid: FeatureGrid
    cloud: OrganizedPointCloud
    sample_id: str
    label: str = NORMAL
    gt_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = (self.cloud.height, self.cloud.width)
        for name, g in (("rgb_grid", self.rgb_grid), ("pc_grid", self.pc_grid)):
            if (g.height, g.width) != shape:
                raise ShapeMismatch(f"{name} is {g.height}x{g.width}, cloud is {shape[0]}x{shape[1]}")
        if self.label not in (NORMAL, ANOMALOUS):
            raise ValueError(f"label must be 'normal' or 'anomalous', got {self.label!r}")
        if self.gt_mask is not None:
            m = np.array(self.gt_mask, dtype=bool)
            if m.shape != shape:
                raise ShapeMismatch(f"gt_mask {m.shape} does not match {shape}")
            if self.label == NORMAL and m.any():
                raise ValueError("normal sample with a non-empty gt_mask")
            m.setflags(write=False)
            object.__setattr__(self, "gt_mask", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cloud.height, self.cloud.width

    def gt_or_empty(self) -> np.ndarray:
        return self.gt_mask if self.gt_mask is not None else np.zeros(self.shape, bool)

    def __eq__(self, other):
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        if (self.gt_mask is None) != (other.gt_mask is None):
            return False
        return (
            self.sample_id == other.sample_id
            and self.label == other.label
            and self.rgb_grid == other.rgb_grid
            and self.pc_grid == other.pc_grid
            and self.cloud == other.cloud
            and (self.gt_mask is None or np.array_equal(self.gt_mask, other.gt_mask))
        )


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _bits(mask: np.ndarray) -> bytes:
    return np.packbits(np.asarray(mask, bool), axis=1).tobytes()


def encode_bundle(b: FeatureBundle) -> bytes:
    h, w = b.shape
    flags = 0
    if b.rgb_grid.class_token is not None:
        flags |= FLAG_RGB_TOKEN
    if b.pc_grid.class_token is not None:
        flags |= FLAG_PC_TOKEN
    if b.gt_mask is not None:
        flags |= FLAG_GT_MASK
    sid = b.sample_id.encode("utf-8")
    parts = [
        _HEAD.pack(MAGIC, VERSION, h, w, b.rgb_grid.dim, b.pc_grid.dim, flags,
                   int(b.label == ANOMALOUS), len(sid)),
        sid,
        _f32(b.rgb_grid.patches),
    ]
    if flags & FLAG_RGB_TOKEN:
        parts.append(_f32(b.rgb_grid.class_token))
    parts.append(_f32(b.pc_grid.patches))
    if flags & FLAG_PC_TOKEN:
        parts.append(_f32(b.pc_grid.class_token))
    parts.append(_f32(b.cloud.positions))
    parts += [_bits(b.rgb_grid.valid), _bits(b.pc_grid.valid), _bits(b.cloud.valid)]
    if flags & FLAG_GT_MASK:
        parts.append(_bits(b.gt_mask))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedBlob(f"{what}: need {n} bytes at offset {self.pos}, "
                                f"only {len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def floats(self, shape, what: str) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(4 * n, what)
        with np.errstate(invalid="ignore"):  # signaling NaN payloads widen to NaN quietly
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    def bits(self, h: int, w: int, what: str) -> np.ndarray:
        row = (w + 7) // 8
        raw = np.frombuffer(self.take(h * row, what), dtype=np.uint8).reshape(h, row)
        return np.unpackbits(raw, axis=1, count=w).astype(bool)


def decode_bundle(data: bytes) -> FeatureBundle:
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicMismatch(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < _HEAD.size:
        raise MalformedHeader("header shorter than fixed size")
    _, version, h, w, d_rgb, d_pc, flags, label, id_len = _HEAD.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"bundle version {version}, reader supports {VERSION}")
    if h == 0 or w == 0 or d_rgb == 0 or d_pc == 0:
        raise MalformedHeader(f"zero dimension in header ({h}, {w}, {d_rgb}, {d_pc})")
    if flags & ~(FLAG_RGB_TOKEN | FLAG_PC_TOKEN | FLAG_GT_MASK):
        raise MalformedHeader(f"unknown flag bits 0x{flags:02x}")
    if label > 1:
        raise MalformedHeader(f"label byte {label} out of range")
    r = _Reader(data)
    r.pos = _HEAD.size
    try:
        sample_id = r.take(id_len, "sample id").decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedHeader(f"sample id is not utf-8: {e}") from None
    rgb = r.floats((h, w, d_rgb), "rgb patches")
    rgb_tok = r.floats((d_rgb,), "rgb class token") if flags & FLAG_RGB_TOKEN else None
    pc = r.floats((h, w, d_pc), "pc patches")
    pc_tok = r.floats((d_pc,), "pc class token") if flags & FLAG_PC_TOKEN else None
    pos = r.floats((h, w, 3), "cloud positions")
    rgb_valid = r.bits(h, w, "rgb validity")
    pc_valid = r.bits(h, w, "pc validity")
    cloud_valid = r.bits(h, w, "cloud validity")
    gt = r.bits(h, w, "gt mask") if flags & FLAG_GT_MASK else None
    if r.pos != len(data):
        raise ShapeMismatch(f"{len(data) - r.pos} trailing bytes after payload")
    try:
        return FeatureBundle(
            rgb_grid=FeatureGrid(rgb, rgb_valid, rgb_tok),
            pc_grid=FeatureGrid(pc, pc_valid, pc_tok),
            cloud=OrganizedPointCloud(pos, cloud_valid),
            sample_id=sample_id,
            label=ANOMALOUS if label else NORMAL,
            gt_mask=gt,
        )
    except BundleError:
        raise
    except ValueError as e:
        raise CorruptPayload(str(e)) from None


def write_bundle(bundle: FeatureBundle, path) -> None:
    Path(path).write_bytes(encode_bundle(bundle))


def read_bundle(path) -> FeatureBundle:
    return decode_bundle(Path(path).read_bytes())
