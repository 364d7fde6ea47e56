"""Decision-layer fusion: bank distances (φ per sample, ψ per patch) combined by linear one-class SVMs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .coreset import MemoryBank
from .ingest.resize import bilinear
from .tensor import NumericFailure

BANKS = ("rgb", "pc", "fused")


def _check(bank: MemoryBank, f) -> np.ndarray:
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    if bank is None or len(bank) == 0:
        raise ValueError("empty memory bank")
    if f.size == 0:
        raise ValueError("no query patches")
    if f.shape[1] != bank.dim:
        raise ValueError(f"patch dim {f.shape[1]} != bank dim {bank.dim}")
    return f


def phi(bank: MemoryBank, f) -> float:
    """Largest nearest-bank distance over the patches, scaled by the η stored with the matched entry."""
    f = _check(bank, f)
    d, idx = bank.nearest(f)
    i = int(np.argmax(d))
    return float(bank.weights[idx[i]] * d[i])


def psi(bank: MemoryBank, f) -> np.ndarray:
    """Nearest-bank distance of every patch, in input order (no η)."""
    return bank.nearest(_check(bank, f))[0]


def psi_map(bank: MemoryBank, grid_feats: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """ψ laid out on the patch grid; cells without a feature get 0."""
    out = np.zeros(valid.shape)
    if valid.any():
        out[valid] = psi(bank, grid_feats[valid])
    return out


# -- one-class SVM ------------------------------------------------------------------

W_INIT = np.full(3, 1.0 / math.sqrt(3.0))


@dataclass
class Ocsvm:
    w: np.ndarray = field(default_factory=lambda: W_INIT.copy())
    rho: float = 0.0
    nu: float = 0.5
    lr: float = 1e-4
    steps: int = 1000
    shift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    fallback: bool = False

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if not (np.all(np.isfinite(self.w)) and math.isfinite(self.rho)):
            raise NumericFailure("non-finite OCSVM parameters")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale

    def score(self, x) -> np.ndarray:
        """w . x - rho on (optionally standardized) score triples; works on (..., 3)."""
        return self.transform(x) @ self.w - self.rho

    def to_json(self) -> dict:
        return {"w": self.w.tolist(), "rho": self.rho, "nu": self.nu, "lr": self.lr, "steps": self.steps,
                "shift": np.asarray(self.shift).tolist(), "scale": np.asarray(self.scale).tolist(),
                "fallback": self.fallback}

    @classmethod
    def from_json(cls, d: dict) -> "Ocsvm":
        return cls(np.array(d["w"]), float(d["rho"]), d["nu"], d["lr"], d["steps"],
                   np.array(d["shift"]), np.array(d["scale"]), bool(d.get("fallback", False)))


def ocsvm_objective(w, rho: float, x: np.ndarray, nu: float) -> float:
    """1/2 ||w||^2 + 1/(nu n) sum max(0, rho - w.x) - rho."""
    x = np.asarray(x, dtype=np.float64)
    hinge = np.maximum(0.0, rho - x @ w)
    return 0.5 * float(w @ w) + float(hinge.sum()) / (nu * len(x)) - rho


def ocsvm_subgradient(w, rho: float, x: np.ndarray, nu: float) -> tuple[np.ndarray, float]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    active = (rho - x @ w) > 0
    c = 1.0 / (nu * len(x))
    return w - c * x[active].sum(axis=0), c * active.sum() - 1.0


def train_ocsvm(x, nu: float = 0.5, lr: float = 1e-4, steps: int = 1000, seed: int = 0,
                standardize: bool = False) -> Ocsvm:
    """Stochastic subgradient descent, one shuffled sample per step, epochs reshuffled with a seeded RNG."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or len(x) < 2:
        raise ValueError("need at least two (n, 3) score triples")
    if not np.all(np.isfinite(x)):
        raise NumericFailure("non-finite OCSVM training scores")
    shift, scale = np.zeros(3), np.ones(3)
    if standardize:
        shift = x.mean(axis=0)
        sd = x.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
    span = x.max(axis=0) - x.min(axis=0)
    if np.all(span <= 1e-6 * (1.0 + np.abs(x).max())):
        warnings.warn("OCSVM inputs are all identical; using equal weights", RuntimeWarning, stacklevel=2)
        m = Ocsvm(W_INIT.copy(), 0.0, nu, lr, steps, shift, scale, fallback=True)
        m.rho = float(np.mean(m.transform(x) @ m.w))
        return m
    xt = (x - shift) / scale
    w = W_INIT.copy()
    rho = 0.0
    rng = np.random.default_rng([seed, 0x5C])
    order = rng.permutation(len(xt))
    pos = 0
    for _ in range(steps):
        if pos == len(order):
            order, pos = rng.permutation(len(xt)), 0
        gw, gr = ocsvm_subgradient(w, rho, xt[order[pos]], nu)
        pos += 1
        w = w - lr * gw
        rho = rho - lr * gr
    return Ocsvm(w, float(rho), nu, lr, steps, shift, scale)


# -- final outputs ---------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionOutput:
    s_image: float
    s_pixel: np.ndarray  # H x W, may be negative (offset by -rho)


def upsample(cells: np.ndarray, h: int, w: int) -> np.ndarray:
    if cells.shape == (h, w):
        return cells.copy()
    return bilinear(cells, None, h, w)[0]


def smooth3(x: np.ndarray) -> np.ndarray:
    return uniform_filter(x, size=3, mode="nearest")


def decide(phis: dict[str, float], psis: dict[str, np.ndarray], image_svm: Ocsvm, pixel_svm: Ocsvm,
           out_hw: tuple[int, int], smooth: bool = True) -> DecisionOutput:
    """S_image from the three φ values, S_pixel from the three ψ maps upsampled to ``out_hw``."""
    for b in BANKS:
        if b not in phis or b not in psis:
            raise ValueError(f"missing score for bank {b!r}")
    s_img = float(image_svm.score(np.array([phis[b] for b in BANKS])))
    stack = np.stack([psis[b] for b in BANKS], axis=-1)
    px = pixel_svm.score(stack)
    px = upsample(px, *out_hw)
    if smooth:
        px = smooth3(px)
    if not (math.isfinite(s_img) and np.all(np.isfinite(px))):
        raise NumericFailure("non-finite decision output")
    return DecisionOutput(s_img, px)
