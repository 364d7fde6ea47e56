"""Point-feature alignment: inverse-distance interpolation from sparse centers onto the pixel grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import FeatureGrid, OrganizedPointCloud

MAX_NEIGHBORS = 8


@dataclass(frozen=True)
class CenterFeatures:
    centers: np.ndarray  # (K, 3)
    features: np.ndarray  # (K, D)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        f = np.asarray(self.features, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError(f"centers must be K x 3, got {c.shape}")
        if len(c) == 0:
            raise ValueError("need at least one center")
        if f.ndim != 2 or len(f) != len(c):
            raise ValueError("one feature row per center")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite center positions")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.centers)


def farthest_point_sample(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of ``k`` points picked greedily by distance to the picked set, starting at index 0."""
    n = len(points)
    k = min(k, n)
    if k <= 0:
        return np.zeros(0, int)
    picked = np.empty(k, int)
    picked[0] = 0
    d = np.linalg.norm(points - points[0], axis=1)
    for i in range(1, k):
        j = int(np.argmax(d))
        picked[i] = j
        d = np.minimum(d, np.linalg.norm(points - points[j], axis=1))
    return picked


def centers_from_grid(cloud: OrganizedPointCloud, features: np.ndarray, valid: np.ndarray, k: int) -> CenterFeatures:
    """``k`` farthest-point-sampled pixels that carry a point feature, with their features."""
    ok = valid & cloud.valid
    if not ok.any():
        raise ValueError("no pixel carries both a point and a feature")
    pos = cloud.positions[ok]
    idx = farthest_point_sample(pos, k)
    return CenterFeatures(pos[idx], np.asarray(features)[ok][idx])


def idw_weights(points: np.ndarray, centers: np.ndarray, eps: float = 1e-8,
                max_neighbors: int = MAX_NEIGHBORS) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor indices and normalized inverse-distance weights, both (n, min(K, max_neighbors))."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(centers) == 0:
        raise ValueError("need at least one center")
    k = min(len(centers), max_neighbors)
    d = np.sqrt(((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1))
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    inv = 1.0 / (np.take_along_axis(d, idx, axis=1) + eps)
    return idx, inv / inv.sum(axis=1, keepdims=True)


def interpolate_points(points: np.ndarray, cf: CenterFeatures, eps: float = 1e-8) -> np.ndarray:
    """(n, D) interpolated features for arbitrary query points."""
    idx, w = idw_weights(np.asarray(points, dtype=np.float64), cf.centers, eps)
    return np.einsum("nk,nkd->nd", w, cf.features[idx])


def project_to_plane(features: np.ndarray, cloud: OrganizedPointCloud) -> FeatureGrid:
    """Scatter one feature row per valid point back onto the H x W grid; pixels without a point get zeros."""
    f = np.asarray(features, dtype=np.float64)
    n = int(cloud.valid.sum())
    if f.ndim != 2 or len(f) != n:
        raise ValueError(f"expected {n} feature rows, got {f.shape}")
    grid = np.zeros(cloud.valid.shape + (f.shape[1],))
    grid[cloud.valid] = f
    return FeatureGrid(grid, cloud.valid.copy())


def interpolate_point_features(cloud: OrganizedPointCloud, cf: CenterFeatures, eps: float = 1e-8) -> FeatureGrid:
    """Interpolate center features onto every valid point and lay them out on the pixel grid."""
    return project_to_plane(interpolate_points(cloud.points(), cf, eps), cloud)
