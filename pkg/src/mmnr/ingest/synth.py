"""Synthetic RGB + 3D defect dataset.

Each class is a smooth height field resting on a tilted background plane,
painted with a striped color pattern. Defective samples carry a localized
Gaussian bump or dent (3D) and/or a color blotch (RGB) over the same
footprint. Samples go through the same preprocessing as real scans: RANSAC
plane removal, resize to the feature grid, zeroing of removed RGB pixels,
toy encoding.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..encoders import EncoderConfig, TextPrototypes, encode_image, encode_point_grid, grid_class_token, write_prototypes
from ..tensor import FeatureGrid, OrganizedPointCloud, normalize_rows
from .bundle import ANOMALOUS, NORMAL, FeatureBundle, write_bundle
from .manifest import DatasetManifest
from .ransac import remove_background_plane
from .resize import resize_bilinear

MODALITIES = ("rgb-only", "3d-only", "both")
EXTENT = 0.1  # half-width of the scene in scene units
PLANE_DEPTH = 0.5


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 5
    n_train: int = 100
    n_test: int = 40
    defect_rate: float = 0.5  # fraction of anomalous test samples
    train_defect_rate: float = 0.0
    modality: str = "both"
    grid: int = 32
    cloud_res: int = 64
    raster_scale: int = 4
    dim: int = 16
    noise_sigma: float = 0.0005
    color_noise: float = 0.02
    plane_threshold: float = 0.005
    defect_strength: float = 1.0  # scales defect height and blotch opacity
    exemplars: int = 8  # held-out samples per kind behind the prototype sidecar, 0 = none

    def __post_init__(self):
        if self.classes < 1 or self.n_train < 1 or self.n_test < 0:
            raise ValueError("need at least one class and one training sample")
        for r in (self.defect_rate, self.train_defect_rate):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"defect rate {r} outside [0, 1]")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        if self.grid < 8 or self.cloud_res < self.grid:
            raise ValueError("grid must be >= 8 and cloud_res >= grid")
        if self.defect_strength <= 0:
            raise ValueError("defect_strength must be > 0")
        if self.raster_scale < 2:
            raise ValueError("raster_scale must be >= 2")

    def class_names(self) -> list[str]:
        return [f"class{i}" for i in range(self.classes)]


@dataclass(frozen=True)
class ClassStyle:
    rx: float
    ry: float
    height: float
    dome: float
    wave: float
    wave_freq: float
    color_a: tuple
    color_b: tuple
    stripe_freq: float
    stripe_angle: float


def class_style(seed: int, class_idx: int) -> ClassStyle:
    rng = np.random.default_rng([seed, 0xC1A55, class_idx])
    return ClassStyle(
        rx=rng.uniform(0.55, 0.75) * EXTENT,
        ry=rng.uniform(0.55, 0.75) * EXTENT,
        height=rng.uniform(0.025, 0.035),
        dome=rng.uniform(0.005, 0.015),
        wave=rng.uniform(0.001, 0.003),
        wave_freq=rng.uniform(20, 45),
        color_a=tuple(rng.uniform(0.3, 0.8, 3)),
        color_b=tuple(rng.uniform(0.2, 0.9, 3)),
        stripe_freq=rng.uniform(40, 80),
        stripe_angle=rng.uniform(0, np.pi),
    )


@dataclass(frozen=True)
class Defect:
    cx: float
    cy: float
    radius: float
    amplitude: float  # signed height change, 0 for rgb-only
    color: tuple | None  # blotch colors (2 x rgb), None for 3d-only
    texture: tuple = (0.0, 0.0)  # blotch stripe frequency and angle

    def profile(self, x, y):
        return np.exp(-((x - self.cx) ** 2 + (y - self.cy) ** 2) / (2 * self.radius ** 2))

    def footprint(self, x, y):
        return self.profile(x, y) > 0.3


def _coords(n: int):
    c = (np.arange(n) + 0.5) / n * 2 * EXTENT - EXTENT
    return np.meshgrid(c, c, indexing="ij")  # x down rows, y across columns


def _object_mask(style: ClassStyle, x, y, cx, cy):
    return ((x - cx) / style.rx) ** 2 + ((y - cy) / style.ry) ** 2 <= 1.0


def _height(style: ClassStyle, x, y, cx, cy, phase):
    r2 = ((x - cx) / style.rx) ** 2 + ((y - cy) / style.ry) ** 2
    return (style.height + style.dome * np.clip(1 - r2, 0, 1)
            + style.wave * np.sin(style.wave_freq * (x - cx) + phase) * np.cos(style.wave_freq * (y - cy)))


def _draw_defect(style: ClassStyle, modality: str, rng: np.random.Generator, cx, cy,
                 strength: float = 1.0) -> Defect:
    ang = rng.uniform(0, 2 * np.pi)
    rad = rng.uniform(0.0, 0.5)
    dx, dy = rad * style.rx * np.cos(ang), rad * style.ry * np.sin(ang)
    radius = rng.uniform(0.012, 0.018)
    amp = 0.0
    if modality in ("3d-only", "both"):
        amp = strength * rng.uniform(0.006, 0.012) * rng.choice([-1.0, 1.0])
    color, texture = None, (0.0, 0.0)
    if modality in ("rgb-only", "both"):
        color = tuple(map(tuple, rng.uniform(0.0, 1.0, (2, 3))))
        texture = (rng.uniform(0.0, 600.0), rng.uniform(0, np.pi))
    return Defect(cx + dx, cy + dy, radius, amp, color, texture)


def render_sample(spec: SynthSpec, style: ClassStyle, rng: np.random.Generator, defect: bool):
    """Raw scene: (cloud at cloud_res, raster, clean-height residual, gt at grid res, Defect or None)."""
    cx, cy = rng.uniform(-0.06, 0.06, 2) * EXTENT
    phase = rng.uniform(0, 2 * np.pi)
    tilt = rng.normal(0, 0.05, 2)
    d = _draw_defect(style, spec.modality, rng, cx, cy, spec.defect_strength) if defect else None

    x, y = _coords(spec.cloud_res)
    plane = PLANE_DEPTH + tilt[0] * x + tilt[1] * y
    obj = _object_mask(style, x, y, cx, cy)
    h = _height(style, x, y, cx, cy, phase)
    dh = np.zeros_like(h)
    if d is not None and d.amplitude:
        dh = d.amplitude * d.profile(x, y)
    z = plane + np.where(obj, h + dh, 0.0) + rng.normal(0, spec.noise_sigma, x.shape)
    cloud = OrganizedPointCloud(np.stack([x, y, z], axis=-1), np.ones(x.shape, bool))

    n = spec.grid * spec.raster_scale
    rx_, ry_ = _coords(n)
    t = np.cos(style.stripe_angle) * (rx_ - cx) + np.sin(style.stripe_angle) * (ry_ - cy)
    mix = (0.5 + 0.5 * np.sin(style.stripe_freq * t + phase))[..., None]
    raster = (1 - mix) * np.array(style.color_a) + mix * np.array(style.color_b)
    raster = raster * rng.uniform(0.95, 1.05)
    if d is not None and d.color is not None:
        alpha = np.clip(1.6 * spec.defect_strength * d.profile(rx_, ry_), 0, 1)[..., None]
        freq, ang = d.texture
        t = np.cos(ang) * (rx_ - d.cx) + np.sin(ang) * (ry_ - d.cy)
        mix = (0.5 + 0.5 * np.sin(freq * t))[..., None]
        blotch = (1 - mix) * np.array(d.color[0]) + mix * np.array(d.color[1])
        raster = (1 - alpha) * raster + alpha * blotch
    raster = np.clip(raster + rng.normal(0, spec.color_noise, raster.shape), 0, 1)

    gx, gy = _coords(spec.grid)
    gt = np.zeros((spec.grid, spec.grid), bool)
    if d is not None:
        gt = d.footprint(gx, gy) & _object_mask(style, gx, gy, cx, cy)
    return cloud, raster, dh, gt, d


def build_bundle(spec: SynthSpec, style: ClassStyle, seed: int, sample_id: str,
                 defect: bool, enc: EncoderConfig) -> FeatureBundle:
    rng = np.random.default_rng(seed)
    cloud, raster, _, gt, d = render_sample(spec, style, rng, defect)
    cloud = remove_background_plane(cloud, spec.plane_threshold, 1000, seed, border=spec.cloud_res // 8)
    cloud = resize_bilinear(cloud, spec.grid, spec.grid)
    keep = np.kron(cloud.valid, np.ones((spec.raster_scale, spec.raster_scale), bool))
    raster = np.where(keep[..., None], raster, 0.0)
    rgb = encode_image(raster, (spec.grid, spec.grid), enc)
    rgb = FeatureGrid(rgb.patches, rgb.valid & cloud.valid, None)
    rgb = FeatureGrid(rgb.patches, rgb.valid, grid_class_token(rgb))
    pc = encode_point_grid(cloud.positions, cloud.valid, enc)
    gt = gt & cloud.valid
    anomalous = d is not None and gt.any()
    return FeatureBundle(rgb, pc, cloud, sample_id,
                         ANOMALOUS if anomalous else NORMAL,
                         gt if anomalous else None)


def sample_seed(seed: int, class_idx: int, split: str, i: int) -> int:
    index = (class_idx * 2 + (split == "test")) * 100_000 + i
    return seed ^ index


PROTO_FILES = {"rgb": "prototypes_rgb.mmna", "pc": "prototypes_pc.mmna"}


def exemplar_prototypes(spec: SynthSpec, style: ClassStyle, seed: int, class_idx: int,
                        enc: EncoderConfig, name: str = "") -> dict[str, TextPrototypes]:
    """Normal / anomalous prototypes pooled from held-out rendered exemplars.

    Stands in for a pretrained vision-language model that already knows what
    a flawless and a damaged instance of the class look like. The exemplars
    use their own seed range and never enter the train or test splits.
    """
    n = spec.exemplars
    base = seed ^ ((class_idx * 2 + 1) * 100_000 + 50_000)
    normal = [build_bundle(spec, style, base + i, "exemplar", False, enc) for i in range(n)]
    defect = [build_bundle(spec, style, base + n + i, "exemplar", True, enc) for i in range(n)]

    def pooled(bundles, grid):
        return normalize_rows(np.mean([getattr(b, grid).class_token for b in bundles], axis=0))

    return {"rgb": TextPrototypes(pooled(normal, "rgb_grid"), pooled(defect, "rgb_grid"), name),
            "pc": TextPrototypes(pooled(normal, "pc_grid"), pooled(defect, "pc_grid"), name)}


def _plan(spec: SynthSpec, seed: int, class_idx: int, split: str) -> list[bool]:
    n = spec.n_train if split == "train" else spec.n_test
    rate = spec.train_defect_rate if split == "train" else spec.defect_rate
    k = int(round(rate * n))
    rng = np.random.default_rng([seed, 0x5917, class_idx, split == "test"])
    flags = np.zeros(n, bool)
    flags[rng.choice(n, size=k, replace=False)] = True
    return flags.tolist()


def generate_synthetic_dataset(spec: SynthSpec, seed: int, out_dir, threads: int = 1) -> dict[str, dict[str, DatasetManifest]]:
    """Write bundles and per-class ``train.json`` / ``test.json`` manifests under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    enc = EncoderConfig(dim=spec.dim, seed=seed)
    jobs = []
    for ci, name in enumerate(spec.class_names()):
        style = class_style(seed, ci)
        for split in ("train", "test"):
            (out / name / split).mkdir(parents=True, exist_ok=True)
            for i, defect in enumerate(_plan(spec, seed, ci, split)):
                sid = f"{name}_{split}_{i:03d}"
                jobs.append((name, split, style, sample_seed(seed, ci, split, i), sid, defect))

    def work(job):
        name, split, style, s, sid, defect = job
        rel = f"{split}/{sid}.mmnr"
        write_bundle(build_bundle(spec, style, s, sid, defect, enc), out / name / rel)
        return name, split, rel

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            done = list(ex.map(work, jobs))
    else:
        done = [work(j) for j in jobs]

    manifests: dict[str, dict[str, DatasetManifest]] = {}
    for ci, name in enumerate(spec.class_names()):
        if spec.exemplars:
            protos = exemplar_prototypes(spec, class_style(seed, ci), seed, ci, enc, name)
            for mod, fname in PROTO_FILES.items():
                write_prototypes(protos[mod], out / name / fname)
        manifests[name] = {}
        for split in ("train", "test"):
            rels = [r for n, s, r in done if n == name and s == split]
            m = DatasetManifest(name, split, tuple(rels), seed=seed, root=str(out / name))
            m.save(out / name / f"{split}.json")
            manifests[name][split] = m
    (out / "dataset.json").write_text(json.dumps(
        {"seed": seed, "spec": asdict(spec), "classes": spec.class_names()}, sort_keys=True, indent=1) + "\n")
    return manifests
