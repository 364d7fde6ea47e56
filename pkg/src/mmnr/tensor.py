"""Dense containers shared by every stage of the pipeline.

Grids are indexed row-major, ``[u, v]`` = (row, column), origin top-left.
All arrays are float64 in memory; file formats narrow to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DegenerateFeature(ValueError):
    """A feature vector with zero norm where a direction is required."""


class NumericFailure(ArithmeticError):
    """Training or scoring produced non-finite values."""


def as_vec(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def cosine_sim(a, b) -> float:
    a, b = as_vec(a), as_vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeature("cosine similarity of a zero-norm vector")
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))


def l2_dist(a, b) -> float:
    a, b = as_vec(a), as_vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def normalize_rows(x: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """L2-normalize the last axis; rows with zero norm stay zero."""
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    out = np.zeros_like(x)
    np.divide(x, n + eps, out=out, where=n > 0)
    return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """H x W grid of D-dim patch features with an optional class token."""

    patches: np.ndarray
    valid: np.ndarray
    class_token: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.array(self.patches, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError(f"patches must be H x W x D, got {p.shape}")
        m = np.array(self.valid, dtype=bool)
        if m.shape != p.shape[:2]:
            raise ValueError(f"valid mask {m.shape} does not match grid {p.shape[:2]}")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite patch features")
        p[~m] = 0.0
        object.__setattr__(self, "patches", _frozen(p))
        object.__setattr__(self, "valid", _frozen(m))
        if self.class_token is not None:
            t = np.array(self.class_token, dtype=np.float64)
            if t.shape != (p.shape[2],):
                raise ValueError(f"class token shape {t.shape} != ({p.shape[2]},)")
            object.__setattr__(self, "class_token", _frozen(t))

    @property
    def height(self) -> int:
        return self.patches.shape[0]

    @property
    def width(self) -> int:
        return self.patches.shape[1]

    @property
    def dim(self) -> int:
        return self.patches.shape[2]

    def __eq__(self, other):
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        if (self.class_token is None) != (other.class_token is None):
            return False
        same_token = self.class_token is None or np.array_equal(self.class_token, other.class_token)
        return (
            self.patches.shape == other.patches.shape
            and np.array_equal(self.patches, other.patches)
            and np.array_equal(self.valid, other.valid)
            and same_token
        )


@dataclass(frozen=True, eq=False)
class OrganizedPointCloud:
    """H x W x 3 positions with a per-pixel validity mask."""

    positions: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        p = np.array(self.positions, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"positions must be H x W x 3, got {p.shape}")
        m = np.array(self.valid, dtype=bool)
        if m.shape != p.shape[:2]:
            raise ValueError(f"valid mask {m.shape} does not match cloud {p.shape[:2]}")
        if not np.all(np.isfinite(p[m])):
            raise ValueError("valid pixels must have finite coordinates")
        p[~m] = 0.0
        object.__setattr__(self, "positions", _frozen(p))
        object.__setattr__(self, "valid", _frozen(m))

    @property
    def height(self) -> int:
        return self.positions.shape[0]

    @property
    def width(self) -> int:
        return self.positions.shape[1]

    def points(self) -> np.ndarray:
        """Valid points in row-major pixel order, shape (n, 3)."""
        return self.positions[self.valid]

    def with_valid(self, valid: np.ndarray) -> "OrganizedPointCloud":
        return OrganizedPointCloud(self.positions, np.asarray(valid, bool) & self.valid)

    def __eq__(self, other):
        if not isinstance(other, OrganizedPointCloud):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(self.valid, other.valid)


@dataclass(frozen=True, eq=False)
class AnomalyMap:
    """H x W non-negative score grid.

    ``covered`` marks pixels that received at least one contribution; it is
    all-true unless a producer says otherwise.
    """

    scores: np.ndarray
    covered: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError(f"scores must be H x W, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite anomaly scores")
        if np.any(s < 0):
            raise ValueError("anomaly scores must be non-negative")
        c = np.ones(s.shape, bool) if self.covered is None else np.array(self.covered, dtype=bool)
        if c.shape != s.shape:
            raise ValueError("coverage mask shape mismatch")
        object.__setattr__(self, "scores", _frozen(s))
        object.__setattr__(self, "covered", _frozen(c))

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]
