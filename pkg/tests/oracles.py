"""Brute-force reference implementations used only by the tests.

Nothing here imports the package under test. Each oracle follows the textbook
definition as literally as practical and makes no attempt at speed.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OracleReport:
    op: str
    max_abs_err: float
    max_rel_err: float
    instance: str

    def __post_init__(self):
        if not (math.isfinite(self.max_abs_err) and math.isfinite(self.max_rel_err)):
            raise ValueError(f"{self.op}: non-finite error on {self.instance}")


def compare(op: str, got, want, instance: str = "", floor: float = 1e-12) -> OracleReport:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    err = np.abs(got - want)
    rel = err / np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return OracleReport(op, float(err.max(initial=0.0)), float(rel.max(initial=0.0)), instance)


def _dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def pairwise(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    d = np.zeros((n, n))
    for i in range(n):
        # row by row so every entry is sqrt of a plain difference sum
        d[i] = np.sqrt(((pts - pts[i]) ** 2).sum(axis=1))
    return d


# -- LOF ------------------------------------------------------------------------

def oracle_lof(points, k: int) -> np.ndarray:
    """η for every point; neighborhoods contain every point within the k-distance."""
    d = pairwise(points)
    n = len(d)
    kdist = np.zeros(n)
    hoods = []
    for p in range(n):
        others = sorted(d[p, o] for o in range(n) if o != p)
        kdist[p] = others[k - 1]
        hoods.append([o for o in range(n) if o != p and d[p, o] <= kdist[p]])
    lrd = np.zeros(n)
    for p in range(n):
        reach = [max(kdist[o], d[p, o]) for o in hoods[p]]
        lrd[p] = 1.0 / max(sum(reach) / len(reach), 1e-12)
    return np.array([sum(lrd[o] for o in hoods[p]) / len(hoods[p]) / lrd[p] for p in range(n)])


# -- k-center -------------------------------------------------------------------

def oracle_kcenter(points, m: int) -> float:
    """Optimal covering radius with m centers drawn from the points, by exhaustive search."""
    d = pairwise(points)
    n = len(d)
    best = math.inf
    for combo in itertools.combinations(range(n), m):
        r = max(min(d[i, c] for c in combo) for i in range(n))
        best = min(best, r)
    return best


def radius_of(points, centers) -> float:
    d = pairwise(points)
    return max(min(d[i, c] for c in centers) for i in range(len(d)))


# -- window-score aggregation ---------------------------------------------------------

def oracle_aggregate(h: int, w: int, windows, weight) -> tuple[np.ndarray, np.ndarray]:
    """Per pixel: sum of weight * score over covering windows, divided by their count.

    ``windows`` is a list of (r0, r1, c0, c1, score). ``weight(j, r, c)`` gives
    the weight of window j at pixel (r, c).
    """
    out = np.zeros((h, w))
    covered = np.zeros((h, w), bool)
    for r in range(h):
        for c in range(w):
            total, count = 0.0, 0
            for j, (r0, r1, c0, c1, s) in enumerate(windows):
                if r0 <= r < r1 and c0 <= c < c1:
                    total += weight(j, r, c) * s
                    count += 1
            if count:
                out[r, c] = total / count
                covered[r, c] = True
    return out, covered


# -- IDW ------------------------------------------------------------------------

def oracle_idw(point, centers, features, eps: float, max_neighbors: int = 8) -> np.ndarray:
    ds = sorted((_dist(point, c), i) for i, c in enumerate(centers))[:max_neighbors]
    inv = [1.0 / (dd + eps) for dd, _ in ds]
    tot = sum(inv)
    return sum(v / tot * np.asarray(features[i], dtype=np.float64) for v, (_, i) in zip(inv, ds))


# -- metrics ----------------------------------------------------------------------

def oracle_auroc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def components8(mask) -> list[list[tuple[int, int]]]:
    """8-connected components by breadth-first search."""
    m = np.asarray(mask, bool)
    h, w = m.shape
    seen = np.zeros_like(m)
    comps = []
    for r in range(h):
        for c in range(w):
            if not m[r, c] or seen[r, c]:
                continue
            comp, q = [], deque([(r, c)])
            seen[r, c] = True
            while q:
                y, x = q.popleft()
                comp.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and m[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            q.append((yy, xx))
            comps.append(comp)
    return comps


def oracle_pro_points(maps, gts) -> list[tuple[float, float]]:
    """(fpr, mean region overlap) for the empty prediction and every distinct score threshold."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    gts = [np.asarray(g, bool) for g in gts]
    comps = [(i, c) for i, g in enumerate(gts) for c in components8(g)]
    n_normal = sum(int((~g).sum()) for g in gts)
    pts = [(0.0, 0.0)]
    for t in sorted(set(np.concatenate([m.ravel() for m in maps]).tolist()), reverse=True):
        pred = [m >= t for m in maps]
        fp = sum(int((p & ~g).sum()) for p, g in zip(pred, gts))
        overlaps = [sum(1 for (y, x) in c if pred[i][y, x]) / len(c) for i, c in comps]
        pts.append((fp / n_normal, sum(overlaps) / len(overlaps)))
    return pts


def oracle_aupro(maps, gts, fpr_limit: float = 0.3) -> float:
    pts = oracle_pro_points(maps, gts)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if x0 >= fpr_limit:
            break
        if x1 > fpr_limit:
            y1 = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
            x1 = fpr_limit
        area += (x1 - x0) * (y0 + y1) / 2.0
    return min(1.0, area / fpr_limit)


# -- gradients ----------------------------------------------------------------------

def oracle_grad(loss, params: dict, eps: float = 1e-5) -> dict:
    """Central differences of ``loss(params)`` for every entry of every array in ``params``.

    ``params`` is perturbed in place and restored.
    """
    out = {}
    for name, a in params.items():
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss(params)
            flat[i] = keep - eps
            down = loss(params)
            flat[i] = keep
            g.reshape(-1)[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def grad_rel_error(analytic: dict, numeric: dict, floor: float = 1e-6) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, floor) over all parameters."""
    worst = 0.0
    for k in numeric:
        a = np.asarray(analytic[k], dtype=np.float64)
        n = numeric[k]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


# -- naive model pieces for the gradient oracle -------------------------------------------

def naive_mlp(x, w1, b1, w2, b2):
    return np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2


def naive_infonce(sim: np.ndarray) -> float:
    """Mean of the two directional cross-entropies of a square logit matrix with diagonal positives."""
    n = len(sim)
    total = 0.0
    for i in range(n):
        row = sim[i]
        col = sim[:, i]
        total += -(row[i] - math.log(sum(math.exp(v - row.max()) for v in row)) - row.max())
        total += -(col[i] - math.log(sum(math.exp(v - col.max()) for v in col)) - col.max())
    return total / (2 * n)


def naive_uff_loss(params: dict, x_rgb, x_pc, temperature: float) -> float:
    h = {}
    for mod, x in (("rgb", x_rgb), ("pc", x_pc)):
        p = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(mod + ".")}
        m = naive_mlp(x, p["fc1.W"], p["fc1.b"], p["fc2.W"], p["fc2.b"])
        z = m @ p["proj.W"].T + p["proj.b"]
        h[mod] = z / np.sqrt((z ** 2).sum(axis=1, keepdims=True))
    return naive_infonce(h["rgb"] @ h["pc"].T / temperature)


def naive_ocsvm_objective(w, rho: float, x, nu: float) -> float:
    hinge = sum(max(0.0, rho - float(np.dot(w, xi))) for xi in x)
    return 0.5 * float(np.dot(w, w)) + hinge / (nu * len(x)) - rho
