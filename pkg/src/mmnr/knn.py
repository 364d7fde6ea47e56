"""Exact Euclidean nearest-neighbor search by chunked brute force.

Candidates come from the ||a||^2 + ||b||^2 - 2ab expansion (one matmul per
chunk); every candidate within a small slack of the best is then re-measured
with the direct difference formula, so reported distances and neighbor sets
do not depend on expansion round-off.
"""

from __future__ import annotations

import numpy as np

CHUNK = 1024


def direct_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sqrt(np.sum(d * d, axis=-1))


def _slack(sq_a: np.ndarray, sq_b: np.ndarray) -> np.ndarray:
    # expansion error bound, generous: relative to the operand magnitudes
    return 1e-9 * (sq_a[:, None] + sq_b.max(initial=0.0) + 1.0)


class ExactIndex:
    def __init__(self, entries: np.ndarray):
        e = np.asarray(entries, dtype=np.float64)
        if e.ndim != 2 or len(e) == 0:
            raise ValueError("index needs a nonempty (n, D) array")
        self.entries = e
        self.sq = np.sum(e * e, axis=1)

    def __len__(self) -> int:
        return len(self.entries)

    def nearest(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest entry for every query row (lowest index on ties)."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.entries.shape[1]:
            raise ValueError("query dim does not match index dim")
        dist = np.empty(len(q))
        arg = np.empty(len(q), int)
        for s in range(0, len(q), CHUNK):
            qc = q[s:s + CHUNK]
            sq_q = np.sum(qc * qc, axis=1)
            d2 = sq_q[:, None] + self.sq[None, :] - 2.0 * qc @ self.entries.T
            cand = d2 <= d2.min(axis=1, keepdims=True) + _slack(sq_q, self.sq)
            rows, cols = np.nonzero(cand)
            exact = direct_dist(qc[rows], self.entries[cols])
            best = np.full(len(qc), np.inf)
            np.minimum.at(best, rows, exact)
            # lowest index among exact minima
            hit = exact == best[rows]
            first = np.full(len(qc), len(self.entries))
            np.minimum.at(first, rows[hit], cols[hit])
            dist[s:s + CHUNK] = best
            arg[s:s + CHUNK] = first
        return dist, arg


def knn_with_ties(points: np.ndarray, k: int):
    """k-distance and tie-inclusive neighbor sets of every point against the rest of the set.

    Returns ``(kdist, indptr, indices, dists)``: neighbors of point i are
    ``indices[indptr[i]:indptr[i+1]]``, i.e. every other point with distance
    <= kdist[i].
    """
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    if k < 1 or n <= k:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    sq = np.sum(x * x, axis=1)
    kdist = np.empty(n)
    indptr = [0]
    idx_parts, dist_parts = [], []
    for s in range(0, n, CHUNK):
        xc = x[s:s + CHUNK]
        m = len(xc)
        d2 = sq[s:s + m, None] + sq[None, :] - 2.0 * xc @ x.T
        d2[np.arange(m), np.arange(s, s + m)] = np.inf  # never your own neighbor
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        cand = d2 <= kth[:, None] + _slack(sq[s:s + m], sq)
        for r in range(m):
            cols = np.nonzero(cand[r])[0]
            d = direct_dist(xc[r], x[cols])
            kd = np.partition(d, k - 1)[k - 1]
            keep = d <= kd
            kdist[s + r] = kd
            idx_parts.append(cols[keep])
            dist_parts.append(d[keep])
            indptr.append(indptr[-1] + int(keep.sum()))
    return kdist, np.array(indptr), np.concatenate(idx_parts), np.concatenate(dist_parts)
