"""Multi-scale window masks and aligned image / point-cloud segmentation.

Three scales: ``l`` is one window covering the whole grid, ``m`` and ``s``
are k x k windows laid out at a fixed stride with clipping at the borders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import FeatureGrid, OrganizedPointCloud, normalize_rows

SCALES = ("l", "m", "s")


@dataclass(frozen=True)
class Window:
    u: int  # anchor row
    v: int  # anchor column
    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def rows(self) -> slice:
        return slice(self.r0, self.r1)

    @property
    def cols(self) -> slice:
        return slice(self.c0, self.c1)

    @property
    def area(self) -> int:
        return (self.r1 - self.r0) * (self.c1 - self.c0)


@dataclass(frozen=True)
class ScaleMaskSet:
    scale: str
    kernel: int
    height: int
    width: int
    windows: tuple[Window, ...]

    def __len__(self) -> int:
        return len(self.windows)

    def mask(self, i: int) -> np.ndarray:
        w = self.windows[i]
        m = np.zeros((self.height, self.width), bool)
        m[w.rows, w.cols] = True
        return m

    def coverage(self) -> np.ndarray:
        """Number of windows covering each cell."""
        c = np.zeros((self.height, self.width), np.int64)
        for w in self.windows:
            c[w.rows, w.cols] += 1
        return c


def default_kernels(h: int) -> dict[str, int]:
    return {"m": math.ceil(h / 4), "s": math.ceil(h / 8)}


def _starts(n: int, stride: int) -> range:
    return range(0, n, stride)


def _scale_windows(h: int, w: int, k: int, stride: int) -> tuple[Window, ...]:
    out = []
    half = (k - 1) // 2
    for r in _starts(h, stride):
        for c in _starts(w, stride):
            out.append(Window(min(r + half, h - 1), min(c + half, w - 1),
                              r, min(r + k, h), c, min(c + k, w)))
    return tuple(out)


def build_masks(h: int, w: int, kernels: dict[str, int] | None = None,
                stride: int | dict[str, int] | None = None) -> dict[str, ScaleMaskSet]:
    """Masks for the three scales.

    ``stride`` may be one int for both local scales or a per-scale dict;
    ``None`` gives half-overlapping windows (stride = k // 2).
    """
    kernels = dict(kernels or default_kernels(h))
    k_m, k_s = kernels["m"], kernels["s"]
    if not (1 <= k_s < k_m <= min(h, w)):
        raise ValueError(f"need 1 <= k_s < k_m <= min(h, w); got k_s={k_s}, k_m={k_m}, grid {h}x{w}")
    if stride is None:
        strides = {"m": max(1, k_m // 2), "s": max(1, k_s // 2)}
    elif isinstance(stride, dict):
        strides = dict(stride)
    else:
        strides = {"m": stride, "s": stride}
    if min(strides.values()) < 1:
        raise ValueError("stride must be >= 1")
    full = Window(h // 2, w // 2, 0, h, 0, w)
    return {
        "l": ScaleMaskSet("l", max(h, w), h, w, (full,)),
        "m": ScaleMaskSet("m", k_m, h, w, _scale_windows(h, w, k_m, strides["m"])),
        "s": ScaleMaskSet("s", k_s, h, w, _scale_windows(h, w, k_s, strides["s"])),
    }


@dataclass(frozen=True)
class ImagePatch:
    scale: str
    index: int  # window index within the scale's mask set
    anchor: tuple[int, int]
    features: np.ndarray  # (n_valid_cells, D)

    def mean_feature(self) -> np.ndarray:
        return self.features.mean(axis=0)


def segment_image(grid: FeatureGrid, masks: dict[str, ScaleMaskSet], need_token: bool = False):
    """Split a feature grid into per-scale window feature sets.

    Invalid cells are left out; windows without any valid cell are skipped.
    Returns ``(patches_by_scale, class_token)``.
    """
    out: dict[str, list[ImagePatch]] = {}
    for sigma, ms in masks.items():
        if (ms.height, ms.width) != (grid.height, grid.width):
            raise ValueError(f"mask grid {ms.height}x{ms.width} != feature grid {grid.height}x{grid.width}")
        patches = []
        for i, win in enumerate(ms.windows):
            ok = grid.valid[win.rows, win.cols]
            if not ok.any():
                continue
            feats = grid.patches[win.rows, win.cols][ok]
            patches.append(ImagePatch(sigma, i, (win.u, win.v), feats))
        out[sigma] = patches
    if need_token and grid.class_token is None:
        raise ValueError("feature grid carries no class token")
    return out, grid.class_token


def window_features(patches: list[ImagePatch]) -> np.ndarray:
    """Unit-normalized mean feature of each window, shape (n_windows, D)."""
    if not patches:
        return np.zeros((0, 0))
    return normalize_rows(np.stack([p.mean_feature() for p in patches]))


@dataclass(frozen=True)
class PointPatch:
    anchor: tuple[int, int]
    scale: str
    index: int
    points: np.ndarray  # (count, 3)

    @property
    def count(self) -> int:
        return len(self.points)


def segment_cloud_ampcfe(cloud: OrganizedPointCloud, masks: dict[str, ScaleMaskSet],
                         theta: int = 128) -> dict[str, list[PointPatch]]:
    """Window the cloud exactly like the image and keep patches with more than ``theta`` valid points."""
    if theta < 1:
        raise ValueError("theta must be >= 1")
    out: dict[str, list[PointPatch]] = {}
    for sigma, ms in masks.items():
        if (ms.height, ms.width) != (cloud.height, cloud.width):
            raise ValueError(f"mask grid {ms.height}x{ms.width} != cloud {cloud.height}x{cloud.width}")
        kept = []
        for i, win in enumerate(ms.windows):
            ok = cloud.valid[win.rows, win.cols]
            if ok.sum() <= theta:
                continue
            pts = cloud.positions[win.rows, win.cols][ok]
            kept.append(PointPatch((win.u, win.v), sigma, i, pts))
        out[sigma] = kept
    return out
