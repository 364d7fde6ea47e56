"""End-to-end orchestration over a run directory.

Layout under ``<out_dir>/<config fingerprint>/``::

    stage1.json  stage2.json  manifests/  head/<class>/  banks/<class>/
    scores/<class>.json  maps/<class>/  artifacts.json  eval.json

Every stage reads what it needs from memory when the previous stage ran in
the same process and from the run directory otherwise, so the CLI
subcommands and ``run`` produce the same files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, dump_config
from .coreset import MemoryBank, build_bank
from .decision import BANKS, Ocsvm, decide, phi, psi_map, train_ocsvm
from .encoders import ROLE_PC, EncoderConfig, PromptEnsemble, read_prototypes, text_prototypes
from .fuse.uff import load_head, save_head, train_uff
from .ingest.archive import load_arrays, save_arrays
from .ingest.bundle import ANOMALOUS, read_bundle
from .ingest.manifest import DatasetManifest, NoiseProtocol, load_manifest
from .ingest.noise import inject_noise
from .ingest.synth import PROTO_FILES
from .metrics import evaluate
from .patching import build_masks
from .stage1 import ReferenceSet, extract_features, select_references
from .stage2 import denoise
from .stage3 import fused_grid, patch_grids, training_pairs
from .tensor import AnomalyMap

log = logging.getLogger("mmnr")

STAGES = ("stage1", "stage2", "train-uff", "build-banks", "infer", "eval")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# -- cached per-file work, keyed by file identity ------------------------------------

def _file_key(path) -> tuple:
    st = os.stat(path)
    return str(Path(path).resolve()), st.st_mtime_ns, st.st_size


@lru_cache(maxsize=4096)
def _bundle(key: tuple):
    return read_bundle(key[0])


@lru_cache(maxsize=4096)
def _s12(key: tuple, enc: EncoderConfig, kernels: tuple, stride: int, theta: int):
    b = _bundle(key)
    masks = _masks(b.shape, kernels, stride)
    return extract_features(b, masks, theta, enc)


@lru_cache(maxsize=4096)
def _s3(key: tuple, enc: EncoderConfig, centers: int, pool: int):
    return patch_grids(_bundle(key), enc, centers, pool)


@lru_cache(maxsize=64)
def _masks(shape: tuple, kernels: tuple, stride: int):
    k = dict(kernels) if kernels else None
    return build_masks(shape[0], shape[1], k, stride or None)


def clear_caches() -> None:
    for f in (_bundle, _s12, _s3, _masks):
        f.cache_clear()


def load_bundle(path):
    return _bundle(_file_key(path))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _read_json(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"{path} is missing; run the earlier stage first")
    return json.loads(path.read_text())


class Run:
    def __init__(self, cfg: PipelineConfig, run_dir=None):
        self.cfg = cfg
        self.root = Path(cfg.data.root)
        self.dir = Path(run_dir) if run_dir else Path(cfg.out_dir) / cfg.fingerprint()[:16]
        self._mem: dict = {}

    # -- data -----------------------------------------------------------------

    def classes(self) -> list[str]:
        if self.cfg.data.classes:
            return list(self.cfg.data.classes)
        ds = self.root / "dataset.json"
        if ds.is_file():
            return list(json.loads(ds.read_text())["classes"])
        found = sorted(p.parent.name for p in self.root.glob("*/train.json"))
        if not found:
            raise FileNotFoundError(f"no classes under {self.root}")
        return found

    def manifests(self, name: str) -> tuple[DatasetManifest, DatasetManifest]:
        """Noisy train and test manifests for one class."""
        key = ("manifests", name)
        if key not in self._mem:
            d = self.root / name
            train = load_manifest(d / "train.json")
            test = load_manifest(d / "test.json")
            frac = self.cfg.data.noise_fraction if self.cfg.data.noise != "clean" else 0.0
            proto = NoiseProtocol(self.cfg.data.noise if frac > 0 else "clean", frac)
            labels = [load_bundle(test.path(s)).label for s in test.samples] if frac > 0 else None
            self._mem[key] = inject_noise(train, test, proto, self.cfg.seed, labels)
        return self._mem[key]

    def bundles(self, m: DatasetManifest):
        return [load_bundle(m.path(s)) for s in m.samples]

    def _map(self, fn, items):
        if self.cfg.threads > 1:
            with ThreadPoolExecutor(self.cfg.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(x) for x in items]

    def _mask_args(self):
        s1 = self.cfg.stage1
        kernels = tuple(sorted({"m": s1.kernel_m, "s": s1.kernel_s}.items())) if s1.kernel_m and s1.kernel_s else ()
        return kernels, s1.stride

    def masks(self, shape):
        return _masks(tuple(shape), *self._mask_args())

    def s12_features(self, m: DatasetManifest):
        kernels, stride = self._mask_args()
        enc, theta = self.cfg.encoder, self.cfg.stage1.theta
        return self._map(lambda s: _s12(_file_key(m.path(s)), enc, kernels, stride, theta), m.samples)

    def s3_grids(self, m: DatasetManifest):
        s3 = self.cfg.stage3
        enc = self.cfg.stage3_encoder
        return self._map(lambda s: _s3(_file_key(m.path(s)), enc, s3.centers, s3.pool), m.samples)

    def prototypes(self, name: str):
        """(rgb, pc) prototypes and where they came from."""
        mode = self.cfg.stage1.prototypes
        files = {k: self.root / name / f for k, f in PROTO_FILES.items()}
        have = all(p.is_file() for p in files.values())
        if mode == "sidecar" or (mode == "auto" and have):
            if not have:
                raise FileNotFoundError(f"prototype sidecars missing for class {name}")
            pr, pp = (read_prototypes(files[k], name) for k in ("rgb", "pc"))
            if len(pr.normal) != self.cfg.encoder.dim:
                raise ConfigError(f"sidecar prototypes are {len(pr.normal)}-d, encoder.dim is {self.cfg.encoder.dim}")
            return pr, pp, "sidecar"
        enc = self.cfg.encoder
        if enc.kind != "toy":
            raise ConfigError("external-bundle features need prototype sidecar files")
        s1 = self.cfg.stage1
        ens = PromptEnsemble(tuple(s1.templates), tuple(s1.normal_states), tuple(s1.anomalous_states))
        pc_enc = dataclasses.replace(enc, seed=enc.seed ^ ROLE_PC)
        return text_prototypes(ens, name, enc), text_prototypes(ens, name, pc_enc), "text"

    # -- stages -----------------------------------------------------------------

    def stage1(self) -> dict:
        report = {}
        for name in self.classes():
            if not self.cfg.stage2.enabled:
                report[name] = {"skipped": True}
                continue
            train, _ = self.manifests(name)
            feats = self.s12_features(train)
            pr, pp, source = self.prototypes(name)
            shape = feats[0].shape
            refs = select_references(feats, pr, pp, self.masks(shape), self.cfg.stage1.n_refs)
            save_arrays(self.dir / "maps" / name / "suspect.mmna",
                        **{f"ref{i}": m.scores for i, m in enumerate(refs.suspect_maps)})
            self._mem.pop(("refs", name), None)  # continue from the stored (float32) maps
            paths = dict(zip((f.sample_id for f in feats), train.samples))
            report[name] = {
                "prototypes": source,
                "references": refs.ids,
                "reference_paths": [paths[i] for i in refs.ids],
                "samples": [{"id": s.sample_id, "s_image": s.s_image, "s_pc": s.s_pc, "s_ref": s.s_ref}
                            for s in refs.scores],
                "suspect_range": [float(min(m.scores.min() for m in refs.suspect_maps)),
                                  float(max(m.scores.max() for m in refs.suspect_maps))],
            }
        _write_json(self.dir / "stage1.json", report)
        return report

    def _refs(self, name: str) -> ReferenceSet:
        if ("refs", name) not in self._mem:
            rep = _read_json(self.dir / "stage1.json")[name]
            train, _ = self.manifests(name)
            by_id = {f.sample_id: f for f in self.s12_features(train)}
            maps = load_arrays(self.dir / "maps" / name / "suspect.mmna")
            refs = tuple(by_id[i] for i in rep["references"])
            self._mem[("refs", name)] = ReferenceSet(
                refs, tuple(AnomalyMap(maps[f"ref{i}"]) for i in range(len(refs))))
        return self._mem[("refs", name)]

    def stage2(self) -> dict:
        report = {}
        for name in self.classes():
            train, _ = self.manifests(name)
            ids = [load_bundle(train.path(s)).sample_id for s in train.samples]
            if self.cfg.stage2.enabled:
                feats = self.s12_features(train)
                pr, pp, _ = self.prototypes(name)
                s2 = self.cfg.stage2
                rep = denoise(feats, self._refs(name), pr, pp, self.masks(feats[0].shape),
                              s2.lambda_i, s2.lambda_p, self.cfg.stage2_tau())
                removed = rep.removed_ids
                entry = {"enabled": True, **rep.to_json()}
            else:
                removed = frozenset()
                entry = {"enabled": False, "removed": []}
            kept = tuple(s for s, i in zip(train.samples, ids) if i not in removed)
            inj = set(train.injected)
            kept_inj = tuple(s for s in kept if s in inj)
            filtered = DatasetManifest(name, "train", kept, train.noise_protocol, train.seed, kept_inj, train.root)
            self._write_manifest(filtered)
            self._mem[("kept", name)] = filtered
            entry["noise"] = noise_stats(len(train.samples), len(inj), len(kept), len(kept_inj))
            report[name] = entry
        _write_json(self.dir / "stage2.json", report)
        return report

    def _write_manifest(self, m: DatasetManifest) -> None:
        d = m.to_json()
        d["root"] = os.path.relpath(m.root, self.dir / "manifests")
        _write_json(self.dir / "manifests" / f"{m.class_name}.train.json", d)

    def kept(self, name: str) -> DatasetManifest:
        if ("kept", name) not in self._mem:
            self._mem[("kept", name)] = load_manifest(self.dir / "manifests" / f"{name}.train.json")
        return self._mem[("kept", name)]

    def train_uff(self) -> dict:
        report = {}
        for name in self.classes():
            grids = self.s3_grids(self.kept(name))
            cfg = dataclasses.replace(self.cfg.uff, seed=self.cfg.uff.seed ^ self.cfg.seed)
            head, tr = train_uff([training_pairs(g) for g in grids], cfg)
            out = self.dir / "head" / name
            save_head(head, out)
            self._mem[("head", name)] = load_head(out)  # use the stored (float32) weights from here on
            report[name] = {"loss_first": tr.losses[0], "loss_last": tr.losses[-1],
                            "holdout_initial": tr.holdout_initial, "holdout_final": tr.holdout_final}
            _write_json(out / "train.json", report[name])
        return report

    def head(self, name: str):
        if ("head", name) not in self._mem:
            self._mem[("head", name)] = load_head(self.dir / "head" / name)
        return self._mem[("head", name)]

    def _bank_inputs(self, name: str, grids):
        head = self.head(name)
        per = {"rgb": [], "pc": [], "fused": []}
        for g in grids:
            f, ok = fused_grid(head, g)
            per["rgb"].append((g.rgb, g.rgb_valid))
            per["pc"].append((g.pc, g.pc_valid))
            per["fused"].append((f, ok))
        return per

    def build_banks(self) -> dict:
        report = {}
        s3 = self.cfg.stage3
        for name in self.classes():
            kept = self.kept(name)
            grids = self.s3_grids(kept)
            per = self._bank_inputs(name, grids)
            out = self.dir / "banks" / name
            out.mkdir(parents=True, exist_ok=True)
            banks, stats = {}, {}
            # provenance only feeds the report: patches over the defect of an injected sample
            defect = [_defect_cells(load_bundle(kept.path(s)), s3.pool) if s in set(kept.injected)
                      else np.zeros(grids[i].shape, bool) for i, s in enumerate(kept.samples)]
            for b in BANKS:
                feats = np.concatenate([f[ok] for f, ok in per[b]])
                origin = np.concatenate([d[ok] for d, (_, ok) in zip(defect, per[b])])
                bank = build_bank(feats, s3.lof_k, self.cfg.stage3_tau(), s3.coreset_fraction, self.cfg.seed)
                bank.save(out / f"{b}.mmna")
                banks[b] = MemoryBank.load(out / f"{b}.mmna")
                stats[b] = {"input": int(len(feats)), "entries": len(bank),
                            "noise_fraction_input": float(origin.mean()),
                            "noise_fraction_bank": float(origin[bank.source].mean())}
            self._mem[("banks", name)] = banks
            img_x, pix_x = [], []
            for i in range(len(grids)):
                img_x.append([_phi(banks[b], *per[b][i]) for b in BANKS])
                maps = np.stack([psi_map(banks[b], *per[b][i]) for b in BANKS], axis=-1)
                any_ok = per["rgb"][i][1] | per["pc"][i][1]
                pix_x.append(maps[any_ok])
            oc = self.cfg.ocsvm
            svm_img = train_ocsvm(np.array(img_x), oc.nu, oc.lr, oc.steps, self.cfg.seed, oc.standardize)
            svm_pix = train_ocsvm(np.concatenate(pix_x), oc.nu, oc.lr, oc.steps, self.cfg.seed + 1, oc.standardize)
            _write_json(out / "ocsvm.json", {"image": svm_img.to_json(), "pixel": svm_pix.to_json()})
            self._mem[("svm", name)] = (svm_img, svm_pix)
            _write_json(out / "bank.json", stats)
            report[name] = stats
        return report

    def banks(self, name: str):
        if ("banks", name) not in self._mem:
            d = self.dir / "banks" / name
            self._mem[("banks", name)] = {b: MemoryBank.load(d / f"{b}.mmna") for b in BANKS}
            svm = _read_json(d / "ocsvm.json")
            self._mem[("svm", name)] = (Ocsvm.from_json(svm["image"]), Ocsvm.from_json(svm["pixel"]))
        return self._mem[("banks", name)], self._mem[("svm", name)]

    def infer(self) -> dict:
        report = {}
        for name in self.classes():
            _, test = self.manifests(name)
            banks, (svm_img, svm_pix) = self.banks(name)
            grids = self.s3_grids(test)
            per = self._bank_inputs(name, grids)
            scores = []
            for i, s in enumerate(test.samples):
                b = load_bundle(test.path(s))
                phis = {k: _phi(banks[k], *per[k][i]) for k in BANKS}
                psis = {k: psi_map(banks[k], *per[k][i]) for k in BANKS}
                out = decide(phis, psis, svm_img, svm_pix, b.shape, self.cfg.eval.smooth)
                save_arrays(self.dir / "maps" / name / f"{b.sample_id}.mmna", s_pixel=out.s_pixel)
                scores.append({"id": b.sample_id, "path": s, "s_image": out.s_image})
            _write_json(self.dir / "scores" / f"{name}.json", {"class": name, "samples": scores})
            report[name] = len(scores)
        return report

    def evaluate(self) -> dict:
        per_class = {}
        stage2 = _read_json(self.dir / "stage2.json")
        for name in self.classes():
            _, test = self.manifests(name)
            sc = _read_json(self.dir / "scores" / f"{name}.json")["samples"]
            by_path = {e["path"]: e for e in sc}
            labels, img, maps, gts = [], [], [], []
            for s in test.samples:
                b = load_bundle(test.path(s))
                e = by_path[s]
                labels.append(b.label == ANOMALOUS)
                img.append(e["s_image"])
                maps.append(load_arrays(self.dir / "maps" / name / f"{e['id']}.mmna")["s_pixel"].astype(np.float64))
                gts.append(b.gt_or_empty())
            res = evaluate(img, labels, maps, gts, self.cfg.eval.fpr_limit)
            per_class[name] = {**res.to_json(), "noise": stage2[name]["noise"]}
        mean = {k: float(np.mean([per_class[c][k] for c in per_class])) for k in ("i_auroc", "p_auroc", "aupro")}
        tot = [per_class[c]["noise"] for c in per_class]
        noise = noise_stats(sum(t["train"] for t in tot), sum(t["injected"] for t in tot),
                            sum(t["kept"] for t in tot), sum(t["kept_injected"] for t in tot))
        artifacts = self.artifact_hashes()
        _write_json(self.dir / "artifacts.json", artifacts)
        result = {
            "config": self.cfg.fingerprint(),
            "protocol": {"noise": self.cfg.data.noise, "fraction": self.cfg.data.noise_fraction},
            "classes": per_class, "mean": mean, "noise": noise,
            "artifacts_sha256": hashlib.sha256(json.dumps(artifacts, sort_keys=True).encode()).hexdigest(),
        }
        _write_json(self.dir / "eval.json", result)
        return result

    def artifact_hashes(self) -> dict:
        skip = {"eval.json", "artifacts.json", "config.toml"}
        return {str(p.relative_to(self.dir)): sha256_file(p)
                for p in sorted(self.dir.rglob("*")) if p.is_file() and p.name not in skip}

    def run_stage(self, stage: str):
        fn = {"stage1": self.stage1, "stage2": self.stage2, "train-uff": self.train_uff,
              "build-banks": self.build_banks, "infer": self.infer, "eval": self.evaluate}[stage]
        try:
            log.info("%s: %s", self.dir.name, stage)
            return fn()
        except StageError:
            raise
        except Exception as e:  # tag with the stage, keep the cause for exit-code mapping
            raise StageError(stage, e) from e


def _defect_cells(bundle, p: int) -> np.ndarray:
    """gt mask reduced to the pooled patch grid: a cell is a defect cell if any pixel is."""
    m = bundle.gt_or_empty()
    h, w = m.shape
    hp, wp = -(-h // p), -(-w // p)
    pad = np.zeros((hp * p, wp * p), bool)
    pad[:h, :w] = m
    return pad.reshape(hp, p, wp, p).any(axis=(1, 3))


def _phi(bank: MemoryBank, feats: np.ndarray, valid: np.ndarray) -> float:
    return phi(bank, feats[valid]) if valid.any() else 0.0


def noise_stats(train: int, injected: int, kept: int, kept_injected: int) -> dict:
    return {"train": train, "injected": injected, "kept": kept, "kept_injected": kept_injected,
            "noise_level_before": injected / train if train else 0.0,
            "noise_level_after": kept_injected / kept if kept else 0.0}


def run_pipeline(cfg: PipelineConfig, run_dir=None) -> dict:
    """All stages in order; returns the eval report (also written to ``eval.json``)."""
    r = Run(cfg, run_dir)
    r.dir.mkdir(parents=True, exist_ok=True)
    (r.dir / "config.toml").write_text(dump_config(cfg))
    out = None
    for stage in STAGES:
        out = r.run_stage(stage)
    return out


