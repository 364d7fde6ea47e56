"""Minimal dense-network pieces with hand-derived backward passes.

Parameters live in a flat ``dict[str, ndarray]`` so optimizers, gradient
checks and serialization all walk the same structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def init_linear(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / math.sqrt(n_in)
    return rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out)


def linear(x, w, b):
    return x @ w.T + b


def linear_backward(dy, x, w):
    """(dx, dw, db) for y = x w^T + b."""
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def l2_normalize(x, eps: float = 1e-12):
    """Row normalization; returns (y, norms) so the backward pass can reuse the norms."""
    n = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)
    return x / n, n


def l2_normalize_backward(dy, y, n):
    return (dy - y * np.sum(dy * y, axis=1, keepdims=True)) / n


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def diag_cross_entropy(logits):
    """Mean cross-entropy with target class i for row i; returns (loss, dlogits)."""
    b = logits.shape[0]
    ls = log_softmax(logits)
    grad = np.exp(ls)
    grad[np.arange(b), np.arange(b)] -= 1.0
    return -float(np.mean(np.diag(ls))), grad / b


def symmetric_infonce(logits):
    """Mean of row-wise and column-wise diagonal cross-entropy, with gradient."""
    l1, g1 = diag_cross_entropy(logits)
    l2, g2 = diag_cross_entropy(logits.T)
    return 0.5 * (l1 + l2), 0.5 * (g1 + g2.T)


# -- optimizer ------------------------------------------------------------------

def warmup_cosine(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear warmup to ``base_lr`` over ``warmup`` steps, then cosine decay to 0 at ``total``."""
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(1, total - warmup)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step - warmup, span) / span))


@dataclass
class AdamW:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * params[k]
            params[k] -= lr * update
