"""Stage II: compare every training sample against the references, weight by suspect maps, drop the top-τ."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .patching import SCALES, ScaleMaskSet
from .stage1 import ReferenceSet, SampleFeatures, WindowFeatures, zero_shot_score
from .tensor import AnomalyMap


@dataclass(frozen=True)
class PatchScoreField:
    """s̄ for the retained windows of one scale: window indices + scores."""

    scale: str
    index: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if len(self.index) != len(self.scores):
            raise ValueError("one score per retained window")

    def entries(self, masks: ScaleMaskSet):
        return [(masks.windows[i].u, masks.windows[i].v, float(s)) for i, s in zip(self.index, self.scores)]


def intra_modal_score(query: WindowFeatures, refs: list[WindowFeatures], scale: str) -> PatchScoreField:
    """1 - max cosine of each query window against every reference window of the same scale."""
    pool = [r.feats for r in refs if len(r)]
    if not pool:
        raise ValueError(f"no reference patches at scale {scale}")
    bank = np.concatenate(pool)
    if len(query) == 0:
        return PatchScoreField(scale, np.zeros(0, int), np.zeros(0))
    cos = np.clip(query.feats @ bank.T, -1.0, 1.0)
    return PatchScoreField(scale, np.asarray(query.index), 1.0 - cos.max(axis=1))


def patch_weights(suspect_map, masks: ScaleMaskSet) -> list[np.ndarray]:
    """The suspect map restricted to each window; one window at l-scale is the whole map."""
    m = suspect_map.scores if isinstance(suspect_map, AnomalyMap) else np.asarray(suspect_map, float)
    if m.shape != (masks.height, masks.width):
        raise ValueError(f"map {m.shape} does not match masks {(masks.height, masks.width)}")
    return [m[w.rows, w.cols].copy() for w in masks.windows]


def aggregate_scores(field: PatchScoreField, weights, masks: ScaleMaskSet) -> AnomalyMap:
    """Weighted sum of covering window scores over the number of covering windows.

    ``weights`` is an (H, W) map shared by all windows or a per-window list as
    returned by ``patch_weights``. Pixels no retained window covers score 0 and
    are flagged as uncovered.
    """
    h, w = masks.height, masks.width
    per_window = not (isinstance(weights, np.ndarray) and weights.shape == (h, w))
    if not per_window:
        wmap = weights
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for i, s in zip(field.index, field.scores):
        win = masks.windows[i]
        wt = weights[i] if per_window else wmap[win.rows, win.cols]
        num[win.rows, win.cols] += wt * s
        den[win.rows, win.cols] += 1.0
    covered = den > 0
    out = np.zeros((h, w))
    out[covered] = num[covered] / den[covered]
    return AnomalyMap(out, covered)


def _masked_max(values: np.ndarray, covered: np.ndarray) -> float:
    return float(values[covered].max()) if covered.any() else 0.0


def final_sample_score(s_zero: float, map_l: AnomalyMap, map_m: AnomalyMap, map_s: AnomalyMap) -> float:
    """(s_zero + max(m + s) + max(l)) / 3, maxima taken over covered pixels only."""
    ms = map_m.scores + map_s.scores
    ms_cov = map_m.covered | map_s.covered
    return (s_zero + _masked_max(ms, ms_cov) + _masked_max(map_l.scores, map_l.covered)) / 3.0


def modality_score(sample: dict[str, WindowFeatures], refs: list[dict[str, WindowFeatures]],
                   s_zero: float, weight_map: np.ndarray, masks: dict[str, ScaleMaskSet]) -> tuple[float, dict]:
    maps = {}
    for sigma in SCALES:
        f = intra_modal_score(sample[sigma], [r[sigma] for r in refs], sigma)
        maps[sigma] = aggregate_scores(f, weight_map, masks[sigma])
    return final_sample_score(s_zero, maps["l"], maps["m"], maps["s"]), maps


@dataclass(frozen=True)
class SampleDenoiseScore:
    sample_id: str
    s_image: float
    s_pc: float
    s_final: float


@dataclass(frozen=True)
class DenoiseReport:
    samples: tuple[SampleDenoiseScore, ...]
    removed_ids: frozenset
    tau: float
    lambda_i: float
    lambda_p: float

    def kept_ids(self) -> list[str]:
        return [s.sample_id for s in self.samples if s.sample_id not in self.removed_ids]

    def to_json(self) -> dict:
        return {
            "tau": self.tau, "lambda_i": self.lambda_i, "lambda_p": self.lambda_p,
            "removed": sorted(self.removed_ids),
            "samples": [{"id": s.sample_id, "s_image": s.s_image, "s_pc": s.s_pc, "s_final": s.s_final}
                        for s in self.samples],
        }


def rank_removals(ids: list[str], scores, tau: float) -> frozenset:
    """The ceil(tau * M) highest scores; ties go to the smaller id."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    n = math.ceil(tau * len(ids))
    if n >= len(ids):
        raise ValueError(f"tau={tau} would remove all {len(ids)} samples")
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return frozenset(ids[i] for i in order[:n])


def denoise(samples: list[SampleFeatures], refs: ReferenceSet, protos_rgb, protos_pc,
            masks: dict[str, ScaleMaskSet], lambda_i: float = 1.0, lambda_p: float = 1.5,
            tau: float = 0.1) -> DenoiseReport:
    """Score every training sample against the references and mark the top-τ for removal."""
    weight = refs.mean_map()
    ref_rgb = [r.rgb for r in refs.refs]
    ref_pc = [r.pc for r in refs.refs]
    out = []
    for s in samples:
        si, _ = modality_score(s.rgb, ref_rgb, zero_shot_score(s.rgb_token, protos_rgb), weight, masks)
        sp, _ = modality_score(s.pc, ref_pc, zero_shot_score(s.pc_token, protos_pc), weight, masks)
        out.append(SampleDenoiseScore(s.sample_id, si, sp, lambda_i * si + lambda_p * sp))
    removed = rank_removals([o.sample_id for o in out], [o.s_final for o in out], tau)
    return DenoiseReport(tuple(out), removed, tau, lambda_i, lambda_p)
