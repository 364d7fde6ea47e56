"""Background plane removal for organized point clouds."""

from __future__ import annotations

import logging

import numpy as np

from ..tensor import OrganizedPointCloud

log = logging.getLogger(__name__)


def fit_plane_lstsq(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Total least-squares plane through ``points``; returns unit normal n and offset d with n.p + d = 0."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ c)


def ransac_plane(points: np.ndarray, dist_threshold: float, iterations: int, rng: np.random.Generator):
    """Best 3-point plane by inlier count, ties broken by lower mean |residual| of the inliers.

    Returns (normal, offset, inlier mask) after a least-squares refit on the consensus set.
    """
    n_pts = len(points)
    if n_pts < 3:
        raise ValueError(f"RANSAC needs at least 3 points, got {n_pts}")
    triples = np.stack([rng.choice(n_pts, size=3, replace=False) for _ in range(iterations)])
    p = points[triples]
    normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-15
    normals = normals[ok] / norms[ok, None]
    offsets = -np.einsum("ij,ij->i", normals, p[ok, 0])
    best = None
    best_key = (-1, np.inf)
    for start in range(0, len(normals), 128):
        res = np.abs(normals[start:start + 128] @ points.T + offsets[start:start + 128, None])
        inl = res <= dist_threshold
        counts = inl.sum(axis=1)
        sums = np.where(inl, res, 0.0).sum(axis=1)
        for j in range(len(counts)):
            c = int(counts[j])
            key = (c, sums[j] / c if c else np.inf)
            if key[0] > best_key[0] or (key[0] == best_key[0] and key[1] < best_key[1]):
                best_key, best = key, (normals[start + j], float(offsets[start + j]))
    if best is None:
        # every sample was collinear; fall back to the global fit
        best = fit_plane_lstsq(points)
    n, d = best
    inl = np.abs(points @ n + d) <= dist_threshold
    if inl.sum() >= 3:
        n, d = fit_plane_lstsq(points[inl])
        inl = np.abs(points @ n + d) <= dist_threshold
    return n, d, inl


def border_mask(h: int, w: int, border: int) -> np.ndarray:
    m = np.zeros((h, w), bool)
    m[:border, :] = m[-border:, :] = True
    m[:, :border] = m[:, -border:] = True
    return m


def remove_background_plane(
    cloud: OrganizedPointCloud,
    dist_threshold: float = 0.005,
    iterations: int = 1000,
    seed: int = 0,
    border: int | None = 8,
) -> OrganizedPointCloud:
    """Invalidate every point within ``dist_threshold`` of the RANSAC background plane.

    With ``border`` set, plane hypotheses are sampled and scored on the valid
    points inside a ``border``-pixel frame around the image only; if that frame
    holds fewer than 3 valid points the cloud is returned unchanged.
    ``border=None`` uses every valid point.
    """
    if cloud.valid.sum() < 3:
        raise ValueError(f"need at least 3 valid points, got {int(cloud.valid.sum())}")
    rng = np.random.default_rng(seed)
    if border is None:
        sample_mask = cloud.valid
    else:
        sample_mask = cloud.valid & border_mask(cloud.height, cloud.width, border)
        if sample_mask.sum() < 3:
            log.debug("border frame has %d valid points; no plane removed", int(sample_mask.sum()))
            return cloud
    n, d, _ = ransac_plane(cloud.positions[sample_mask], dist_threshold, iterations, rng)
    res = np.abs(cloud.positions @ n + d)
    keep = cloud.valid & (res > dist_threshold)
    return OrganizedPointCloud(cloud.positions, keep)
