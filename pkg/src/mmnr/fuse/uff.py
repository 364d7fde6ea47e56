"""Unsupervised feature fusion: twin MLP + projection heads trained with a patch-wise InfoNCE objective."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ingest.archive import load_arrays, save_arrays
from ..tensor import NumericFailure
from .nn import (
    AdamW, init_linear, l2_normalize, l2_normalize_backward, linear, linear_backward,
    relu, relu_backward, symmetric_infonce, warmup_cosine,
)

MODALITIES = ("rgb", "pc")
LAYERS = ("fc1", "fc2", "proj")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.003
    warmup_steps: int = 250
    batch: int = 16
    steps: int = 750
    patches_per_sample: int = 16
    holdout_per_sample: int = 2
    temperature: float = 0.07
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.temperature <= 0 or self.weight_decay < 0:
            raise ValueError("lr and weight decay must be >= 0, temperature > 0")
        if min(self.batch, self.steps, self.patches_per_sample) < 1 or self.warmup_steps < 0:
            raise ValueError("batch, steps and patches_per_sample must be positive")


@dataclass
class FusionHead:
    """chi (fc1 -> ReLU -> fc2) and sigma (proj) for each modality, stored as ``{mod}.{layer}.{W|b}``."""

    params: dict[str, np.ndarray]
    temperature: float = 0.07

    def __post_init__(self):
        for m in MODALITIES:
            for layer in LAYERS:
                for p in "Wb":
                    k = f"{m}.{layer}.{p}"
                    if k not in self.params:
                        raise ValueError(f"missing parameter {k}")
                    if not np.all(np.isfinite(self.params[k])):
                        raise NumericFailure(f"non-finite parameter {k}")
        if self.params["rgb.proj.W"].shape[0] != self.params["pc.proj.W"].shape[0]:
            raise ValueError("projection output dims differ")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def in_dim(self, mod: str) -> int:
        return self.params[f"{mod}.fc1.W"].shape[1]

    @property
    def fused_dim(self) -> int:
        return self.params["rgb.fc2.W"].shape[0] + self.params["pc.fc2.W"].shape[0]

    def mlp(self, mod: str, x: np.ndarray) -> np.ndarray:
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        return linear(relu(linear(x, p[f"{mod}.fc1.W"], p[f"{mod}.fc1.b"])), p[f"{mod}.fc2.W"], p[f"{mod}.fc2.b"])

    def embed(self, mod: str, x: np.ndarray) -> np.ndarray:
        p = self.params
        return l2_normalize(linear(self.mlp(mod, x), p[f"{mod}.proj.W"], p[f"{mod}.proj.b"]))[0]

    def fuse(self, f_rgb: np.ndarray, f_pc: np.ndarray) -> np.ndarray:
        return np.concatenate([self.mlp("rgb", f_rgb), self.mlp("pc", f_pc)], axis=-1)

    def copy(self) -> "FusionHead":
        return FusionHead({k: v.copy() for k, v in self.params.items()}, self.temperature)


def init_head(dim_rgb: int, dim_pc: int, seed: int, out_dim: int | None = None,
              temperature: float = 0.07) -> FusionHead:
    """Uniform(+-1/sqrt(fan_in)) init; hidden width 4x input, MLP output = input dim."""
    rng = np.random.default_rng([seed, 0x0FF])
    out = out_dim or max(dim_rgb, dim_pc)
    params = {}
    for mod, d in (("rgb", dim_rgb), ("pc", dim_pc)):
        for layer, (n_in, n_out) in zip(LAYERS, ((d, 4 * d), (4 * d, d), (d, out))):
            params[f"{mod}.{layer}.W"], params[f"{mod}.{layer}.b"] = init_linear(rng, n_in, n_out)
    return FusionHead(params, temperature)


def uff_forward(f_rgb, f_pc, head: FusionHead):
    """(h_rgb, h_pc, fused) for one patch pair or a batch of rows."""
    one = np.ndim(f_rgb) == 1
    a = np.atleast_2d(np.asarray(f_rgb, dtype=np.float64))
    b = np.atleast_2d(np.asarray(f_pc, dtype=np.float64))
    if a.shape[1] != head.in_dim("rgb") or b.shape[1] != head.in_dim("pc"):
        raise ValueError("input dims do not match the fusion head")
    h_rgb, h_pc, fused = head.embed("rgb", a), head.embed("pc", b), head.fuse(a, b)
    if one:
        return h_rgb[0], h_pc[0], fused[0]
    return h_rgb, h_pc, fused


def infonce_logits(logits) -> float:
    """Symmetric InfoNCE for a B x B logit matrix whose diagonal holds the positives."""
    s = np.asarray(logits, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("logits must be square")
    if s.shape[0] < 2:
        raise ValueError("InfoNCE needs at least two pairs")
    return symmetric_infonce(s)[0]


def infonce_loss(h_rgb, h_pc, temperature: float) -> float:
    h_rgb = np.asarray(h_rgb, dtype=np.float64)
    h_pc = np.asarray(h_pc, dtype=np.float64)
    if len(h_rgb) != len(h_pc):
        raise ValueError("paired embeddings must have equal counts")
    return infonce_logits(h_rgb @ h_pc.T / temperature)


def loss_and_grads(head: FusionHead, x_rgb: np.ndarray, x_pc: np.ndarray) -> tuple[float, dict]:
    """InfoNCE of a batch of aligned patch pairs and its gradient for every head parameter."""
    if len(x_rgb) < 2:
        raise ValueError("InfoNCE needs at least two pairs")
    p = head.params
    cache = {}
    h = {}
    for mod, x in (("rgb", x_rgb), ("pc", x_pc)):
        a1 = linear(x, p[f"{mod}.fc1.W"], p[f"{mod}.fc1.b"])
        r = relu(a1)
        m = linear(r, p[f"{mod}.fc2.W"], p[f"{mod}.fc2.b"])
        z = linear(m, p[f"{mod}.proj.W"], p[f"{mod}.proj.b"])
        h[mod], n = l2_normalize(z)
        cache[mod] = (x, a1, r, m, n)
    t = head.temperature
    loss, dlog = symmetric_infonce(h["rgb"] @ h["pc"].T / t)
    dh = {"rgb": dlog @ h["pc"] / t, "pc": dlog.T @ h["rgb"] / t}
    grads = {}
    for mod in MODALITIES:
        x, a1, r, m, n = cache[mod]
        dz = l2_normalize_backward(dh[mod], h[mod], n)
        dm, grads[f"{mod}.proj.W"], grads[f"{mod}.proj.b"] = linear_backward(dz, m, p[f"{mod}.proj.W"])
        dr, grads[f"{mod}.fc2.W"], grads[f"{mod}.fc2.b"] = linear_backward(dm, r, p[f"{mod}.fc2.W"])
        _, grads[f"{mod}.fc1.W"], grads[f"{mod}.fc1.b"] = linear_backward(relu_backward(dr, a1), x, p[f"{mod}.fc1.W"])
    return loss, grads


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    holdout_initial: float = float("nan")
    holdout_final: float = float("nan")


def _split_pairs(pairs, cfg: TrainConfig, rng):
    train, held = [], ([], [])
    for a, b in pairs:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if len(a) != len(b):
            raise ValueError("each sample needs aligned rgb / pc patch rows")
        if len(a) == 0:
            continue
        perm = rng.permutation(len(a))
        k = min(cfg.holdout_per_sample, len(a) - 1)
        held[0].append(a[perm[:k]])
        held[1].append(b[perm[:k]])
        train.append((a[perm[k:]], b[perm[k:]]))
    return train, (np.concatenate(held[0]), np.concatenate(held[1]))


def train_uff(pairs, cfg: TrainConfig, out_dim: int | None = None) -> tuple[FusionHead, TrainReport]:
    """Train a fusion head on per-sample aligned patch features.

    ``pairs`` holds one ``(rgb rows, pc rows)`` tuple per denoised training
    sample. Each step draws ``batch`` samples and ``patches_per_sample``
    positions from each; every other pair in the batch is a negative.
    """
    if len(pairs) < 2 * cfg.batch:
        raise ValueError(f"need at least {2 * cfg.batch} training samples, got {len(pairs)}")
    rng = np.random.default_rng([cfg.seed, 0x0FF5])
    train, (ha, hb) = _split_pairs(pairs, cfg, rng)
    if len(train) < 2:
        raise ValueError("fewer than two samples carry patch pairs")
    head = init_head(train[0][0].shape[1], train[0][1].shape[1], cfg.seed, out_dim, cfg.temperature)
    opt = AdamW(cfg.lr, weight_decay=cfg.weight_decay)
    report = TrainReport()
    held_ok = len(ha) >= 2
    if held_ok:
        report.holdout_initial = infonce_loss(head.embed("rgb", ha), head.embed("pc", hb), head.temperature)
    order = rng.permutation(len(train))
    pos = 0
    bsz = min(cfg.batch, len(train))
    for step in range(cfg.steps):
        if pos + bsz > len(order):
            order, pos = rng.permutation(len(train)), 0
        xa, xb = [], []
        for i in order[pos:pos + bsz]:
            a, b = train[i]
            pick = rng.choice(len(a), size=min(cfg.patches_per_sample, len(a)), replace=False)
            xa.append(a[pick])
            xb.append(b[pick])
        pos += bsz
        loss, grads = loss_and_grads(head, np.concatenate(xa), np.concatenate(xb))
        if not math.isfinite(loss):
            raise NumericFailure(f"fusion training diverged at step {step}")
        report.losses.append(loss)
        opt.step(head.params, grads, warmup_cosine(step, cfg.lr, cfg.warmup_steps, cfg.steps))
    for k, v in head.params.items():
        if not np.all(np.isfinite(v)):
            raise NumericFailure(f"non-finite parameter {k} after training")
    if held_ok:
        report.holdout_final = infonce_loss(head.embed("rgb", ha), head.embed("pc", hb), head.temperature)
    return head, report


def save_head(head: FusionHead, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(head.params)
    save_arrays(out / "head.mmna", **{k: head.params[k] for k in names})
    layers = [{"name": k, "shape": list(head.params[k].shape)} for k in names]
    (out / "head.json").write_text(json.dumps(
        {"temperature": head.temperature, "activation": "relu", "layers": layers}, indent=1) + "\n")


def load_head(in_dir) -> FusionHead:
    d = Path(in_dir)
    meta = json.loads((d / "head.json").read_text())
    arrays = load_arrays(d / "head.mmna")
    params = {}
    for layer in meta["layers"]:
        a = np.asarray(arrays[layer["name"]], dtype=np.float64)
        if list(a.shape) != layer["shape"]:
            raise ValueError(f"{layer['name']}: stored shape {a.shape} != manifest {layer['shape']}")
        params[layer["name"]] = a
    return FusionHead(params, float(meta["temperature"]))


__all__ = [
    "FusionHead", "TrainConfig", "TrainReport", "init_head", "uff_forward", "infonce_loss",
    "infonce_logits", "loss_and_grads", "train_uff", "save_head", "load_head",
]
