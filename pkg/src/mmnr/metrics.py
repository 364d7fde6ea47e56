"""Threshold-free detection and localization metrics: rank AUROC and the per-region-overlap curve area."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

EIGHT = np.ones((3, 3), bool)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied positive / negative pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("one label per score")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks, so ties contribute exactly 0.5
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def label_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labels 1..n in scanline order of each component's first pixel."""
    return ndimage.label(np.asarray(mask, bool), structure=EIGHT)


def connected_components(mask) -> list[set]:
    lab, n = label_components(mask)
    return [set(zip(*map(lambda a: a.tolist(), np.nonzero(lab == i)))) for i in range(1, n + 1)]


def pro_curve(maps, gts) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, pro) at every distinct score threshold, from (0, 0) up to predicting everything."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    gts = [np.asarray(g, bool) for g in gts]
    if len(maps) != len(gts) or any(m.shape != g.shape for m, g in zip(maps, gts)):
        raise ValueError("one gt mask of matching shape per map")
    comp_ids, offset = [], 0
    for g in gts:
        lab, n = label_components(g)
        comp_ids.append(np.where(lab > 0, lab + offset, 0).ravel())
        offset += n
    if offset == 0:
        raise ValueError("AUPRO needs at least one anomalous pixel")
    scores = np.concatenate([m.ravel() for m in maps])
    comp = np.concatenate(comp_ids)
    normal = comp == 0
    n_normal = int(normal.sum())
    if n_normal == 0:
        raise ValueError("AUPRO needs at least one normal pixel")
    comp_size = np.bincount(comp, minlength=offset + 1).astype(np.float64)

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    c_sorted = comp[order]
    # last index of every run of equal scores = one threshold each
    ends = np.nonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])[0]
    fp = np.cumsum(c_sorted == 0)[ends]
    # per-pixel overlap contribution 1/|C| / n_components, summed cumulatively
    contrib = np.where(c_sorted > 0, 1.0 / comp_size[c_sorted] / offset, 0.0)
    pro = np.cumsum(contrib)[ends]
    # every region fully covered: exactly 1, not a float sum of fractions
    pro[np.cumsum(c_sorted > 0)[ends] == int((comp > 0).sum())] = 1.0
    return np.r_[0.0, fp / n_normal], np.r_[0.0, pro]


def aupro(maps, gts, fpr_limit: float = 0.3) -> float:
    """Area under PRO vs FPR up to ``fpr_limit`` (trapezoid), divided by ``fpr_limit``."""
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError(f"fpr_limit must lie in (0, 1], got {fpr_limit}")
    fpr, pro = pro_curve(maps, gts)
    keep = fpr <= fpr_limit
    x, y = fpr[keep], pro[keep]
    if x[-1] < fpr_limit:
        j = int(np.argmax(fpr > fpr_limit))
        t = (fpr_limit - fpr[j - 1]) / (fpr[j] - fpr[j - 1])
        x = np.r_[x, fpr_limit]
        y = np.r_[y, pro[j - 1] + t * (pro[j] - pro[j - 1])]
    area = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))
    return min(1.0, area / fpr_limit)


@dataclass(frozen=True)
class EvalResult:
    i_auroc: float
    p_auroc: float
    aupro: float
    fpr_limit: float = 0.3

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(image_scores, image_labels, pixel_maps, gt_masks, fpr_limit: float = 0.3) -> EvalResult:
    pix = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in pixel_maps])
    gt = np.concatenate([np.asarray(g, bool).ravel() for g in gt_masks])
    return EvalResult(auroc(image_scores, image_labels), auroc(pix, gt),
                      aupro(pixel_maps, gt_masks, fpr_limit), fpr_limit)
