"""Stage I: pick the most normal-looking training samples as intra-modal references.

Every training sample gets a zero-shot suspicion score from its class tokens
against the normal / anomalous text prototypes (one score per modality,
summed). The N lowest become references, and each reference gets a
suspected-anomaly map from harmonic aggregation of window-level zero-shot
scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderConfig, TextPrototypes, encode_point_patch, encode_point_patches, grid_class_token
from .ingest.bundle import FeatureBundle
from .patching import SCALES, ScaleMaskSet, segment_cloud_ampcfe, segment_image, window_features
from .tensor import AnomalyMap, DegenerateFeature, as_vec, cosine_sim, normalize_rows

EPS = 1e-6


@dataclass(frozen=True)
class WindowFeatures:
    """Features of the retained windows of one scale: window indices into the mask set + (n, D) rows."""

    index: np.ndarray
    feats: np.ndarray

    def __len__(self) -> int:
        return len(self.index)


@dataclass(frozen=True)
class SampleFeatures:
    sample_id: str
    rgb_token: np.ndarray
    pc_token: np.ndarray
    rgb: dict[str, WindowFeatures]
    pc: dict[str, WindowFeatures]
    shape: tuple[int, int]


def extract_features(bundle: FeatureBundle, masks: dict[str, ScaleMaskSet], theta: int,
                     enc: EncoderConfig) -> SampleFeatures:
    """Window features for both modalities at all three scales.

    Image windows average the grid features under the mask. Point windows
    come from the aligned point-cloud segmentation: the toy encoder reads the
    raw points, external bundles fall back to averaging ``pc_grid`` under the
    retained windows.
    """
    img, token = segment_image(bundle.rgb_grid, masks)
    rgb_token = token if token is not None else grid_class_token(bundle.rgb_grid)
    rgb = {}
    for sigma in SCALES:
        ps = img[sigma]
        rgb[sigma] = WindowFeatures(np.array([p.index for p in ps], int), window_features(ps))

    patches = segment_cloud_ampcfe(bundle.cloud, masks, theta)
    pc = {}
    for sigma in SCALES:
        ps = patches[sigma]
        idx = np.array([p.index for p in ps], int)
        if enc.kind == "toy":
            feats = encode_point_patches(ps, enc)
        else:
            grid = bundle.pc_grid
            rows = []
            for p in ps:
                w = masks[sigma].windows[p.index]
                ok = grid.valid[w.rows, w.cols]
                rows.append(grid.patches[w.rows, w.cols][ok].mean(axis=0) if ok.any()
                            else np.zeros(grid.dim))
            feats = normalize_rows(np.array(rows).reshape(len(ps), grid.dim))
        pc[sigma] = WindowFeatures(idx, feats)

    if bundle.pc_grid.class_token is not None:
        pc_token = bundle.pc_grid.class_token
    elif enc.kind == "toy" and bundle.cloud.valid.any():
        pc_token = encode_point_patch(bundle.cloud.points(), enc)
    else:
        raise DegenerateFeature(f"{bundle.sample_id}: no point-cloud class token available")
    return SampleFeatures(bundle.sample_id, rgb_token, pc_token, rgb, pc, bundle.shape)


def zero_shot_score(token, protos: TextPrototypes) -> float:
    """Share of (shifted) similarity that goes to the anomalous prototype, in [0, 1]."""
    f = as_vec(token)
    c_a = (cosine_sim(f, protos.anomalous) + 1.0) / 2.0
    c_n = (cosine_sim(f, protos.normal) + 1.0) / 2.0
    if c_a + c_n < 1e-9:
        return 0.5
    return c_a / (c_a + c_n)


def zero_shot_scores(feats: np.ndarray, protos: TextPrototypes) -> np.ndarray:
    """Vectorized ``zero_shot_score`` over unit rows."""
    f = normalize_rows(feats)
    if np.any(~np.any(f, axis=1)):
        raise DegenerateFeature("zero-norm window feature")
    c_a = (f @ normalize_rows(protos.anomalous) + 1.0) / 2.0
    c_n = (f @ normalize_rows(protos.normal) + 1.0) / 2.0
    tot = c_a + c_n
    return np.where(tot < 1e-9, 0.5, c_a / np.where(tot < 1e-9, 1.0, tot))


@dataclass(frozen=True)
class SuspectScore:
    sample_id: str
    s_image: float
    s_pc: float

    @property
    def s_ref(self) -> float:
        return self.s_image + self.s_pc


@dataclass(frozen=True)
class ReferenceSet:
    refs: tuple[SampleFeatures, ...]
    suspect_maps: tuple[AnomalyMap, ...]
    scores: tuple[SuspectScore, ...] = field(default=())

    def __post_init__(self):
        if len(self.refs) != len(self.suspect_maps):
            raise ValueError("one suspect map per reference")

    @property
    def ids(self) -> list[str]:
        return [r.sample_id for r in self.refs]

    def mean_map(self) -> np.ndarray:
        return np.mean([m.scores for m in self.suspect_maps], axis=0)


def suspect_scores(samples: list[SampleFeatures], protos_rgb: TextPrototypes,
                   protos_pc: TextPrototypes) -> list[SuspectScore]:
    return [SuspectScore(s.sample_id, zero_shot_score(s.rgb_token, protos_rgb),
                         zero_shot_score(s.pc_token, protos_pc)) for s in samples]


def harmonic_map(window_scores: dict[str, tuple[np.ndarray, np.ndarray]],
                 masks: dict[str, ScaleMaskSet], eps: float = EPS) -> AnomalyMap:
    """Per-pixel harmonic mean of covering window scores, then arithmetic mean over scales.

    ``window_scores`` maps a scale to (window indices, scores). Pixels that no
    scored window covers get ``eps``.
    """
    first = next(iter(masks.values()))
    h, w = first.height, first.width
    total = np.zeros((h, w))
    n_scales = np.zeros((h, w))
    for sigma, (idx, scores) in window_scores.items():
        ms = masks[sigma]
        inv = np.zeros((h, w))
        cnt = np.zeros((h, w))
        for i, s in zip(idx, scores):
            win = ms.windows[i]
            inv[win.rows, win.cols] += 1.0 / max(float(s), eps)
            cnt[win.rows, win.cols] += 1.0
        hit = cnt > 0
        total[hit] += cnt[hit] / inv[hit]
        n_scales += hit
    covered = n_scales > 0
    out = np.full((h, w), eps)
    out[covered] = total[covered] / n_scales[covered]
    return AnomalyMap(out, covered)


def suspected_anomaly_map(ref: SampleFeatures, protos: TextPrototypes,
                          masks: dict[str, ScaleMaskSet], eps: float = EPS) -> AnomalyMap:
    """Suspected-anomaly map of one reference from its image windows at the m and s scales."""
    ws = {}
    for sigma in ("m", "s"):
        wf = ref.rgb[sigma]
        if len(wf) == 0:
            raise ValueError(f"{ref.sample_id}: no {sigma}-scale windows to score")
        ws[sigma] = (wf.index, zero_shot_scores(wf.feats, protos))
    return harmonic_map(ws, masks, eps)


def select_references(samples: list[SampleFeatures], protos_rgb: TextPrototypes,
                      protos_pc: TextPrototypes, masks: dict[str, ScaleMaskSet],
                      n_refs: int = 4) -> ReferenceSet:
    """The ``n_refs`` samples with the lowest summed zero-shot score; ties go to the smaller sample id."""
    if not samples:
        raise ValueError("empty training set")
    if not 1 <= n_refs <= len(samples):
        raise ValueError(f"need 1 <= N <= {len(samples)}, got {n_refs}")
    scores = suspect_scores(samples, protos_rgb, protos_pc)
    order = sorted(range(len(samples)), key=lambda i: (scores[i].s_ref, samples[i].sample_id))
    refs = tuple(samples[i] for i in order[:n_refs])
    maps = tuple(suspected_anomaly_map(r, protos_rgb, masks) for r in refs)
    return ReferenceSet(refs, maps, tuple(scores))
