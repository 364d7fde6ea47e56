from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bundle import FeatureBundle, read_bundle

PROTOCOLS = ("clean", "overlap", "non_overlap")


@dataclass(frozen=True)
class NoiseProtocol:
    kind: str = "clean"
    fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in PROTOCOLS:
            raise ValueError(f"unknown noise protocol {self.kind!r}")
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError(f"noise fraction must be in [0, 1), got {self.fraction}")
        if self.kind == "clean" and self.fraction != 0.0:
            raise ValueError("clean protocol takes fraction 0")


@dataclass(frozen=True)
class DatasetManifest:
    """One class/split worth of bundle paths.

    ``injected`` lists the samples moved in by noise injection. It is
    evaluation-only provenance; no pipeline stage reads it.
    """

    class_name: str
    split: str
    samples: tuple[str, ...]
    noise_protocol: NoiseProtocol = field(default_factory=NoiseProtocol)
    seed: int = 0
    injected: tuple[str, ...] = ()
    root: str = "."

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "injected", tuple(self.injected))
        missing = set(self.injected) - set(self.samples)
        if self.split == "train" and missing:
            raise ValueError(f"injected samples not in the sample list: {sorted(missing)[:3]}")

    def path(self, sample: str) -> Path:
        return Path(self.root) / sample

    def load(self) -> list[FeatureBundle]:
        return [read_bundle(self.path(s)) for s in self.samples]

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("root")
        d["samples"] = list(self.samples)
        d["injected"] = list(self.injected)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    def with_root(self, root) -> "DatasetManifest":
        return DatasetManifest(self.class_name, self.split, self.samples, self.noise_protocol,
                               self.seed, self.injected, str(root))


def load_manifest(path, check: bool = True) -> DatasetManifest:
    path = Path(path)
    d = json.loads(path.read_text())
    np_ = d.get("noise_protocol") or {}
    # an explicit root (absolute, or relative to the manifest) lets manifests live away from their bundles
    root = path.parent / d["root"] if "root" in d else path.parent
    m = DatasetManifest(
        class_name=d["class_name"],
        split=d["split"],
        samples=tuple(d["samples"]),
        noise_protocol=NoiseProtocol(np_.get("kind", "clean"), float(np_.get("fraction", 0.0))),
        seed=int(d.get("seed", 0)),
        injected=tuple(d.get("injected", ())),
        root=str(root),
    )
    if check:
        for s in m.samples:
            if not m.path(s).is_file():
                raise FileNotFoundError(f"manifest {path} lists missing bundle {s}")
    return m
