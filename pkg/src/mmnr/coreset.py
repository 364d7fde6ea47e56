"""Noise-discriminative coreset selection: LOF density ratios, top-τ patch removal, greedy k-center banks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest.archive import load_arrays, save_arrays
from .knn import ExactIndex, direct_dist, knn_with_ties

EPS_REACH = 1e-12


@dataclass(frozen=True)
class LofResult:
    k: int
    lrd: np.ndarray
    eta: np.ndarray
    kdist: np.ndarray


def lof(points, k: int = 5) -> LofResult:
    """Local reachability density and relative density (η, high = outlier) of every point.

    Neighbor sets include every point tied with the k-th nearest. A point
    whose mean reach distance is zero (a pile of duplicates) gets
    lrd = 1 / EPS_REACH.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be (n, D)")
    kdist, indptr, nb, nd = knn_with_ties(x, k)
    reach = np.maximum(kdist[nb], nd)
    counts = np.diff(indptr)
    mean_reach = np.add.reduceat(reach, indptr[:-1]) / counts
    lrd = 1.0 / np.maximum(mean_reach, EPS_REACH)
    eta = (np.add.reduceat(lrd[nb], indptr[:-1]) / counts) / lrd
    return LofResult(k, lrd, eta, kdist)


def filter_top_tau(points, eta, tau: float):
    """Drop the ceil(tau * n) highest-η rows (earlier rows win ties); returns (kept rows, kept η, kept indices)."""
    x = np.asarray(points)
    eta = np.asarray(eta, dtype=np.float64)
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    n = len(x)
    drop = math.ceil(tau * n)
    if drop >= n:
        raise ValueError(f"tau={tau} removes all {n} patches")
    order = np.lexsort((np.arange(n), -eta))
    keep = np.sort(order[drop:])
    return x[keep], eta[keep], keep


def greedy_coreset(points, fraction: float, seed: int = 0) -> np.ndarray:
    """Farthest-first k-center selection of ceil(fraction * n) indices, in pick order.

    Starts at the point nearest the mean; ties go to the lowest index. The
    procedure is deterministic, ``seed`` is accepted for interface symmetry.
    """
    x = np.asarray(points, dtype=np.float64)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(x)
    if n == 0:
        return np.zeros(0, int)
    m = min(n, math.ceil(fraction * n))
    picked = np.empty(m, int)
    picked[0] = int(np.argmin(direct_dist(x, x.mean(axis=0))))
    d = direct_dist(x, x[picked[0]])
    for i in range(1, m):
        j = int(np.argmax(d))
        picked[i] = j
        np.minimum(d, direct_dist(x, x[j]), out=d)
    return picked


def coverage_radius(points, centers_idx) -> float:
    """Largest distance from any point to its nearest selected point."""
    x = np.asarray(points, dtype=np.float64)
    d, _ = ExactIndex(x[np.asarray(centers_idx)]).nearest(x)
    return float(d.max())


@dataclass
class MemoryBank:
    entries: np.ndarray
    weights: np.ndarray  # η of each entry
    source: np.ndarray  # row of each entry in the feature set the bank was built from

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.source = np.asarray(self.source, dtype=np.int64)
        if self.entries.ndim != 2 or len(self.entries) == 0:
            raise ValueError("memory bank needs a nonempty (m, D) entry array")
        if not len(self.entries) == len(self.weights) == len(self.source):
            raise ValueError("one weight and one source index per entry")
        self.index = ExactIndex(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def nearest(self, queries):
        return self.index.nearest(queries)

    def save(self, path) -> None:
        save_arrays(Path(path), entries=self.entries, weights=self.weights, source=self.source.astype(np.float64))

    @classmethod
    def load(cls, path) -> "MemoryBank":
        a = load_arrays(Path(path))
        return cls(a["entries"], a["weights"], np.rint(a["source"]).astype(np.int64))


def build_bank(features, k: int = 5, tau: float = 0.1, fraction: float = 0.1, seed: int = 0) -> MemoryBank:
    """lof -> filter_top_tau -> greedy_coreset; entries keep their η."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("bank needs a nonempty (n, D) feature array")
    res = lof(x, k)
    kept, eta, keep_idx = filter_top_tau(x, res.eta, tau)
    sel = greedy_coreset(kept, fraction, seed)
    return MemoryBank(kept[sel], eta[sel], keep_idx[sel])
