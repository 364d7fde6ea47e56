"""Stage-three patch features: per-modality grids, aligned point features, pooling, fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import ROLE_STAGE3_PC, ROLE_STAGE3_RGB, EncoderConfig, reproject
from .fuse.align import centers_from_grid, interpolate_point_features
from .fuse.uff import FusionHead
from .ingest.bundle import FeatureBundle
from .tensor import normalize_rows


@dataclass(frozen=True)
class PatchGrids:
    """Patch-grid features of one sample; cells without data are zero and invalid."""

    sample_id: str
    rgb: np.ndarray  # (h, w, D)
    rgb_valid: np.ndarray
    pc: np.ndarray
    pc_valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb_valid.shape

    @property
    def both_valid(self) -> np.ndarray:
        return self.rgb_valid & self.pc_valid


def pool_grid(feats: np.ndarray, valid: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of the valid cells of each p x p block, renormalized; a block is valid if any cell is."""
    if p == 1:
        return feats, valid
    h, w, d = feats.shape
    hp, wp = -(-h // p), -(-w // p)
    f = np.zeros((hp * p, wp * p, d))
    v = np.zeros((hp * p, wp * p), bool)
    f[:h, :w] = np.where(valid[..., None], feats, 0.0)
    v[:h, :w] = valid
    s = f.reshape(hp, p, wp, p, d).sum(axis=(1, 3))
    n = v.reshape(hp, p, wp, p).sum(axis=(1, 3))
    return normalize_rows(s), n > 0


def patch_grids(bundle: FeatureBundle, enc: EncoderConfig, centers: int, pool: int) -> PatchGrids:
    """Re-embed both grids for stage three; point features go through center interpolation."""
    rgb = reproject(bundle.rgb_grid.patches, enc, ROLE_STAGE3_RGB)
    rgb_ok = bundle.rgb_grid.valid
    pc_raw = reproject(bundle.pc_grid.patches, enc, ROLE_STAGE3_PC)
    pc_ok = bundle.pc_grid.valid & bundle.cloud.valid
    if pc_ok.any():
        cf = centers_from_grid(bundle.cloud, pc_raw, pc_ok, centers)
        grid = interpolate_point_features(bundle.cloud, cf)
        pc, pc_ok = normalize_rows(grid.patches), grid.valid
    else:
        pc = np.zeros_like(pc_raw)
    rgb, rgb_ok = pool_grid(np.where(rgb_ok[..., None], rgb, 0.0), rgb_ok, pool)
    pc, pc_ok = pool_grid(pc, pc_ok, pool)
    return PatchGrids(bundle.sample_id, rgb, rgb_ok, pc, pc_ok)


def fused_grid(head: FusionHead, g: PatchGrids) -> tuple[np.ndarray, np.ndarray]:
    ok = g.both_valid
    out = np.zeros(g.shape + (head.fused_dim,))
    if ok.any():
        out[ok] = head.fuse(g.rgb[ok], g.pc[ok])
    return out, ok


def training_pairs(g: PatchGrids) -> tuple[np.ndarray, np.ndarray]:
    ok = g.both_valid
    return g.rgb[ok], g.pc[ok]
