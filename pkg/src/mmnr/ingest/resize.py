from __future__ import annotations

import numpy as np

from ..tensor import AnomalyMap, FeatureGrid, OrganizedPointCloud


def _axis(src: int, dst: int):
    # half-pixel centers, clamped at the borders
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    x = np.clip(x, 0.0, src - 1)
    x0 = np.floor(x).astype(int)
    x1 = np.minimum(x0 + 1, src - 1)
    return x0, x1, x - x0


def bilinear(values: np.ndarray, valid: np.ndarray | None, th: int, tw: int):
    """Bilinear resample of an H x W (x C) array; validity is the AND of every contributing pixel."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or values.shape[0] == 0 or values.shape[1] == 0:
        raise ValueError("cannot resize an empty array")
    if th < 1 or tw < 1:
        raise ValueError(f"target dims must be >= 1, got {th}x{tw}")
    h, w = values.shape[:2]
    y0, y1, fy = _axis(h, th)
    x0, x1, fx = _axis(w, tw)
    extra = (None,) * (values.ndim - 2)
    wy = fy[(slice(None), None) + extra]
    wx = fx[(None, slice(None)) + extra]
    top = values[y0][:, x0] * (1 - wx) + values[y0][:, x1] * wx
    bot = values[y1][:, x0] * (1 - wx) + values[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    if valid is None:
        return out, None
    v = np.asarray(valid, bool)
    uy, ux = fy > 0, fx > 0
    ok = v[y0][:, x0].copy()
    ok &= v[y0][:, x1] | ~ux[None, :]
    ok &= v[y1][:, x0] | ~uy[:, None]
    ok &= v[y1][:, x1] | ~(uy[:, None] & ux[None, :])
    return out, ok


def resize_bilinear(obj, target_h: int, target_w: int):
    """Resize a FeatureGrid, OrganizedPointCloud, AnomalyMap or raw array."""
    if isinstance(obj, OrganizedPointCloud):
        pos, ok = bilinear(obj.positions, obj.valid, target_h, target_w)
        return OrganizedPointCloud(np.where(ok[..., None], pos, 0.0), ok)
    if isinstance(obj, FeatureGrid):
        feats, ok = bilinear(obj.patches, obj.valid, target_h, target_w)
        return FeatureGrid(feats, ok, obj.class_token)
    if isinstance(obj, AnomalyMap):
        s, ok = bilinear(obj.scores, obj.covered, target_h, target_w)
        return AnomalyMap(s, ok)
    out, _ = bilinear(obj, None, target_h, target_w)
    return out
