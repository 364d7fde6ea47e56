"""Pipeline configuration: nested dataclasses, TOML loading, and the desk-scale preset.

A bare config reproduces the reference settings (θ = 128, λ = (1.0, 1.5),
N = 4, the fusion and decision-layer schedules). ``preset = "desk"`` starts
from values sized for 32 x 32 synthetic grids instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .encoders import DEFAULT_TEMPLATES, EncoderConfig
from .fuse.uff import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    root: str = "data"
    classes: tuple[str, ...] = ()  # empty = every class listed in dataset.json
    noise: str = "overlap"  # clean | overlap | non_overlap
    noise_fraction: float = 0.1


@dataclass(frozen=True)
class Stage1Config:
    n_refs: int = 4
    theta: int = 128
    kernel_m: int = 0  # 0 = ceil(H / 4)
    kernel_s: int = 0  # 0 = ceil(H / 8)
    stride: int = 0  # 0 = half the kernel
    prototypes: str = "auto"  # auto | text | sidecar
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    normal_states: tuple[str, ...] = ("flawless", "perfect")
    anomalous_states: tuple[str, ...] = ("damaged", "broken", "with a defect")


@dataclass(frozen=True)
class Stage2Config:
    enabled: bool = True
    lambda_i: float = 1.0
    lambda_p: float = 1.5
    tau: float | None = None  # None = injected noise fraction


@dataclass(frozen=True)
class Stage3Config:
    centers: int = 1024
    pool: int = 1
    lof_k: int = 5
    tau: float | None = None  # patch removal before coreset; None = injected noise fraction
    coreset_fraction: float = 0.1


@dataclass(frozen=True)
class OcsvmConfig:
    nu: float = 0.5
    lr: float = 1e-4
    steps: int = 1000
    standardize: bool = False


@dataclass(frozen=True)
class EvalConfig:
    fpr_limit: float = 0.3
    smooth: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "runs"
    threads: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    stage3_encoder: EncoderConfig = field(default_factory=EncoderConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: Stage3Config = field(default_factory=Stage3Config)
    uff: TrainConfig = field(default_factory=TrainConfig)
    ocsvm: OcsvmConfig = field(default_factory=OcsvmConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Hash of everything that affects results (output location and worker count excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def replace(self, **sections) -> "PipelineConfig":
        """Copy with top-level fields or ``section={"key": value}`` overrides."""
        kw = {}
        for name, val in sections.items():
            cur = getattr(self, name)
            if isinstance(val, dict) and dataclasses.is_dataclass(cur):
                kw[name] = dataclasses.replace(cur, **val)
            else:
                kw[name] = val
        return dataclasses.replace(self, **kw)

    def stage2_tau(self) -> float:
        return self.data.noise_fraction if self.stage2.tau is None else self.stage2.tau

    def stage3_tau(self) -> float:
        return self.data.noise_fraction if self.stage3.tau is None else self.stage3.tau


def validate(c: PipelineConfig) -> None:
    def need(ok, msg):
        if not ok:
            raise ConfigError(msg)

    need(c.data.noise in ("clean", "overlap", "non_overlap"), f"unknown noise protocol {c.data.noise!r}")
    need(0.0 <= c.data.noise_fraction < 1.0, "data.noise_fraction must lie in [0, 1)")
    need(c.threads >= 1, "threads must be >= 1")
    need(c.stage1.n_refs >= 1, "stage1.n_refs must be >= 1")
    need(c.stage1.theta >= 1, "stage1.theta must be >= 1")
    need(min(c.stage1.kernel_m, c.stage1.kernel_s, c.stage1.stride) >= 0, "kernels and stride must be >= 0")
    need(c.stage1.prototypes in ("auto", "text", "sidecar"), "stage1.prototypes must be auto, text or sidecar")
    for tau in (c.stage2.tau, c.stage3.tau):
        need(tau is None or 0.0 <= tau < 1.0, "tau must lie in [0, 1)")
    need(c.stage2.lambda_i >= 0 and c.stage2.lambda_p >= 0, "lambda weights must be >= 0")
    need(c.stage3.centers >= 1 and c.stage3.pool >= 1 and c.stage3.lof_k >= 1, "stage3 counts must be >= 1")
    need(0.0 < c.stage3.coreset_fraction <= 1.0, "stage3.coreset_fraction must lie in (0, 1]")
    need(0.0 < c.ocsvm.nu <= 1.0 and c.ocsvm.lr >= 0 and c.ocsvm.steps >= 0, "bad ocsvm parameters")
    need(0.0 < c.eval.fpr_limit <= 1.0, "eval.fpr_limit must lie in (0, 1]")


def desk_config(**sections) -> PipelineConfig:
    """Defaults for 32 x 32 grids: θ scaled to the smaller windows, 2x2 patch pooling in stage three."""
    base = PipelineConfig(stage1=Stage1Config(theta=8), stage3=Stage3Config(centers=128, pool=2))
    return base.replace(**sections) if sections else base


SECTIONS = {
    "data": DataConfig, "encoder": EncoderConfig, "stage3_encoder": EncoderConfig,
    "stage1": Stage1Config, "stage2": Stage2Config, "stage3": Stage3Config,
    "uff": TrainConfig, "ocsvm": OcsvmConfig, "eval": EvalConfig,
}


def _coerce(cls, table: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for k, v in table.items():
        if k not in names:
            raise ConfigError(f"unknown key {where}.{k}")
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


def config_from_dict(doc: dict, base_dir: Path | None = None) -> PipelineConfig:
    doc = dict(doc)
    preset = doc.pop("preset", "reference")
    if preset not in ("reference", "desk"):
        raise ConfigError(f"unknown preset {preset!r}")
    base = desk_config() if preset == "desk" else PipelineConfig()
    top, sections = {}, {}
    for k, v in doc.items():
        if k in SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"[{k}] must be a table")
            sections[k] = _coerce(SECTIONS[k], v, k)
        elif k in ("seed", "out_dir", "threads"):
            top[k] = v
        else:
            raise ConfigError(f"unknown key {k}")
    if base_dir is not None:
        d = sections.setdefault("data", {})
        root = Path(d.get("root", base.data.root))
        if not root.is_absolute():
            d["root"] = str((base_dir / root).resolve())
        out = Path(top.get("out_dir", base.out_dir))
        if not out.is_absolute():
            top["out_dir"] = str((base_dir / out).resolve())
    try:
        return base.replace(**top, **sections)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        doc = tomli.loads(p.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from e
    return config_from_dict(doc, p.parent)


def dump_config(cfg: PipelineConfig) -> str:
    """TOML text that loads back into an equal config (reference preset, every key spelled out)."""
    lines = [f"seed = {cfg.seed}", f"out_dir = {json.dumps(cfg.out_dir)}", f"threads = {cfg.threads}", ""]
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for k, v in dataclasses.asdict(getattr(cfg, name)).items():
            if v is None:
                continue
            if isinstance(v, (list, tuple)):
                v = list(v)
            lines.append(f"{k} = {json.dumps(v)}")
        lines.append("")
    return "\n".join(lines)
