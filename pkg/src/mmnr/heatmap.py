from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def hot(t: np.ndarray) -> np.ndarray:
    """Black -> red -> yellow -> white; brightness strictly increases with t."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.clip(3 * t, 0, 1), np.clip(3 * t - 1, 0, 1), np.clip(3 * t - 2, 0, 1)], axis=-1)
    return np.round(rgb * 255).astype(np.uint8)


def heatmap_rgb(scores, scale: int = 1) -> np.ndarray:
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if s.ndim != 2 or s.size == 0:
        raise ValueError(f"heatmap needs a nonempty H x W map, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("heatmap of non-finite scores")
    lo, hi = s.min(), s.max()
    t = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
    img = hot(t)
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    return img


def render_heatmap(scores, path, scale: int = 8) -> Path:
    """Min-max normalized map through the ``hot`` colormap, written as a PNG."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(heatmap_rgb(scores, scale), mode="RGB").save(p, format="PNG")
    return p
