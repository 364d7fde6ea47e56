"""Feature-extraction boundary and a deterministic toy encoder.

The toy encoder maps hand-built statistics through a seeded orthogonal
projection and L2-normalizes the result, so every output is unit norm and a
pure function of ``(input, seed)``. Real encoders plug in by writing
``.mmnr`` bundles directly (``kind="external-bundle"``).
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DegenerateFeature, FeatureGrid, normalize_rows

# role tags, XOR-ed into the global seed
ROLE_RGB = 0x52474200
ROLE_PC = 0x50430000
ROLE_TEXT = 0x54585400
ROLE_STAGE3_RGB = 0x33524700
ROLE_STAGE3_PC = 0x33504300

RASTER_STATS = 8
POINT_STATS = 10


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 16
    seed: int = 0
    kind: str = "toy"

    def __post_init__(self):
        if self.dim < 4:
            raise ValueError(f"encoder dim must be >= 4, got {self.dim}")
        if self.kind not in ("toy", "external-bundle"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")


@functools.lru_cache(maxsize=64)
def orthogonal_projection(in_dim: int, out_dim: int, seed: int) -> np.ndarray:
    """(out_dim, in_dim) matrix with orthonormal columns (or rows if out_dim < in_dim).

    Modified Gram-Schmidt on a seeded Gaussian matrix; no LAPACK call so the
    result does not depend on the linear-algebra backend.
    """
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    tall = out_dim >= in_dim
    n, k = (out_dim, in_dim) if tall else (in_dim, out_dim)
    a = rng.standard_normal((n, k))
    q = np.zeros((n, k))
    for j in range(k):
        v = a[:, j].copy()
        for i in range(j):
            v -= (q[:, i] @ v) * q[:, i]
        q[:, j] = v / np.sqrt(v @ v)
    out = q if tall else q.T
    out.flags.writeable = False  # shared between callers through the cache
    return out


def _check_toy(config: EncoderConfig):
    if config.kind != "toy":
        raise ValueError("features for kind='external-bundle' come from bundle files, not the toy encoder")


# -- images -------------------------------------------------------------------

def raster_statistics(raster: np.ndarray, h: int, w: int) -> np.ndarray:
    """Per-cell statistics (h, w, 8): centered mean color, color spread, 4-bin gradient orientations."""
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ValueError(f"raster must be Hr x Wr x 3, got {raster.shape}")
    hr, wr = raster.shape[:2]
    if hr % h or wr % w:
        raise ValueError(f"raster {hr}x{wr} does not divide into a {h}x{w} grid")
    ch, cw = hr // h, wr // w
    cells = raster.reshape(h, ch, w, cw, 3).transpose(0, 2, 1, 3, 4)  # h, w, ch, cw, 3
    mean = cells.mean(axis=(2, 3))
    spread = cells.std(axis=(2, 3)).mean(axis=-1, keepdims=True)
    gray = cells.mean(axis=-1)
    # gradients stay inside each cell so a cell's statistics only see its own pixels
    gy = np.diff(gray, axis=2)[:, :, :, :-1]
    gx = np.diff(gray, axis=3)[:, :, :-1, :]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ang / (np.pi / 4)).astype(int), 3)
    hist = np.stack([np.where(bins == b, mag, 0.0).sum(axis=(2, 3)) for b in range(4)], axis=-1)
    hist /= max(1, (ch - 1) * (cw - 1))
    return np.concatenate([2.0 * (mean - 0.5), 4.0 * spread, 4.0 * hist], axis=-1)


def encode_image(raster: np.ndarray, grid_hw: tuple[int, int], config: EncoderConfig) -> FeatureGrid:
    _check_toy(config)
    raster = np.asarray(raster, dtype=np.float64)
    if not np.any(raster):
        raise DegenerateFeature("all-zero raster")
    h, w = grid_hw
    stats = raster_statistics(raster, h, w)
    proj = orthogonal_projection(RASTER_STATS, config.dim, config.seed ^ ROLE_RGB)
    feats = normalize_rows(stats @ proj.T)
    token = normalize_rows(feats.reshape(-1, config.dim).mean(axis=0))
    return FeatureGrid(feats, np.ones((h, w), bool), token)


def grid_class_token(grid: FeatureGrid) -> np.ndarray:
    """Normalized mean of the valid patch features."""
    if not grid.valid.any():
        raise DegenerateFeature("grid has no valid cells")
    t = normalize_rows(grid.patches[grid.valid].mean(axis=0))
    if not np.any(t):
        raise DegenerateFeature("valid patch features cancel out")
    return t


# -- point clouds -------------------------------------------------------------

def point_statistics(points: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Geometric descriptor (..., 10) of point sets shaped (..., n, 3).

    Entries: a constant bias, curvature (smallest / largest principal
    spread), elongation, surface tilt (2), centroid offset from the
    bounding-box middle (3), height range and log point count. Lengths are
    divided by the largest principal spread, so the descriptor is
    translation- and scale-free. The bias keeps flat patches on a common
    direction so deviations show up as angles.
    """
    pts = np.asarray(points, dtype=np.float64)
    if mask is None:
        mask = np.ones(pts.shape[:-1], bool)
    wgt = mask.astype(np.float64)[..., None]
    count = wgt.sum(axis=-2)  # (..., 1)
    safe = np.maximum(count, 1.0)
    centroid = (pts * wgt).sum(axis=-2) / safe
    d = (pts - centroid[..., None, :]) * wgt
    cov = np.einsum("...ni,...nj->...ij", d, d) / safe[..., None]
    evals, evecs = np.linalg.eigh(cov)
    spread = np.sqrt(np.maximum(evals, 0.0))  # ascending
    scale = spread[..., 2:3] + 1e-12
    curv = spread[..., 0:1] / scale
    elong = 1.0 - spread[..., 1:2] / scale
    normal = evecs[..., :, 0]
    normal = np.where(normal[..., 2:3] < 0, -normal, normal)
    m = mask[..., None]
    lo = np.where(m, pts, np.inf).min(axis=-2)
    hi = np.where(m, pts, -np.inf).max(axis=-2)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    offset = (centroid - 0.5 * (lo + hi)) / scale
    zr = (hi[..., 2:3] - lo[..., 2:3]) / scale
    return np.concatenate([
        np.ones_like(curv), 6.0 * curv, 2.0 * elong, 1.5 * normal[..., :2],
        6.0 * offset, 0.5 * zr, 0.1 * np.log(safe),
    ], axis=-1)


def _canonical_order(points: np.ndarray) -> np.ndarray:
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return points[order]


def encode_point_patch(points, config: EncoderConfig) -> np.ndarray:
    """Unit feature of one point patch; invariant to point order and translation."""
    _check_toy(config)
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty point patch")
    stats = point_statistics(_canonical_order(pts))
    proj = orthogonal_projection(POINT_STATS, config.dim, config.seed ^ ROLE_PC)
    return normalize_rows(stats @ proj.T)


def encode_point_patches(patches, config: EncoderConfig) -> np.ndarray:
    if not patches:
        return np.zeros((0, config.dim))
    return np.stack([encode_point_patch(p, config) for p in patches])


def encode_point_grid(positions: np.ndarray, valid: np.ndarray, config: EncoderConfig,
                      radius: int = 2, min_neighbors: int = 4) -> FeatureGrid:
    """Per-pixel point features from each pixel's (2r+1)^2 organized neighborhood."""
    _check_toy(config)
    pos = np.asarray(positions, dtype=np.float64)
    ok = np.asarray(valid, bool)
    h, w = ok.shape
    k = 2 * radius + 1
    pp = np.pad(pos, ((radius, radius), (radius, radius), (0, 0)))
    pm = np.pad(ok, radius)
    nb = np.lib.stride_tricks.sliding_window_view(pp, (k, k), axis=(0, 1))  # h, w, 3, k, k
    nb = nb.reshape(h, w, 3, k * k).transpose(0, 1, 3, 2)
    nm = np.lib.stride_tricks.sliding_window_view(pm, (k, k)).reshape(h, w, k * k)
    nm = nm & ok[..., None]
    good = nm.sum(axis=-1) >= min_neighbors
    stats = point_statistics(np.where(nm[..., None], nb, 0.0), nm)
    proj = orthogonal_projection(POINT_STATS, config.dim, config.seed ^ ROLE_PC)
    feats = normalize_rows(stats @ proj.T)
    token = None
    if good.any():
        token = encode_point_patch(pos[ok], config)
    return FeatureGrid(np.where(good[..., None], feats, 0.0), good, token)


def reproject(features: np.ndarray, config: EncoderConfig, role: int) -> np.ndarray:
    """Map stored features into an independent feature space of ``config.dim`` dims."""
    f = np.asarray(features, dtype=np.float64)
    if config.kind != "toy":
        return f
    proj = orthogonal_projection(f.shape[-1], config.dim, config.seed ^ role)
    return normalize_rows(f @ proj.T)


# -- text ---------------------------------------------------------------------

DEFAULT_TEMPLATES = (
    "a photo of a {state} {class}.",
    "a cropped photo of the {state} {class}.",
    "a close-up photo of a {state} {class}.",
    "a bright photo of a {state} {class}.",
    "a photo of the {state} {class} for inspection.",
)


@dataclass(frozen=True)
class PromptEnsemble:
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    normal_states: tuple[str, ...] = ("flawless", "perfect")
    anomalous_states: tuple[str, ...] = ("damaged", "broken", "with a defect")

    def __post_init__(self):
        if not self.templates:
            raise ValueError("prompt ensemble needs at least one template")
        if not self.normal_states or not self.anomalous_states:
            raise ValueError("state lists must be nonempty")
        for t in self.templates:
            if "{state}" not in t or "{class}" not in t:
                raise ValueError(f"template {t!r} lacks a {{state}} or {{class}} placeholder")

    def fill(self, states, class_name: str) -> list[str]:
        return [t.replace("{state}", s).replace("{class}", class_name)
                for t in self.templates for s in states]


@dataclass(frozen=True)
class TextPrototypes:
    normal: np.ndarray
    anomalous: np.ndarray
    class_name: str = ""

    def __post_init__(self):
        for v in (self.normal, self.anomalous):
            if not np.any(v):
                raise DegenerateFeature("text prototype is the zero vector")


def text_vector(text: str, config: EncoderConfig) -> np.ndarray:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little") ^ config.seed ^ ROLE_TEXT
    v = np.random.default_rng(seed).standard_normal(config.dim)
    return normalize_rows(v)


def text_prototypes(ensemble: PromptEnsemble, class_name: str, config: EncoderConfig) -> TextPrototypes:
    if config.kind != "toy":
        raise ValueError("external prototypes are read with read_prototypes()")

    def pooled(states):
        return normalize_rows(np.mean([text_vector(t, config) for t in ensemble.fill(states, class_name)], axis=0))

    return TextPrototypes(pooled(ensemble.normal_states), pooled(ensemble.anomalous_states), class_name)


def write_prototypes(protos: TextPrototypes, path) -> None:
    from .ingest.archive import save_arrays

    save_arrays(path, normal=protos.normal, anomalous=protos.anomalous)


def read_prototypes(path, class_name: str = "") -> TextPrototypes:
    from .ingest.archive import load_arrays

    a = load_arrays(Path(path))
    return TextPrototypes(a["normal"], a["anomalous"], class_name)
