import dataclasses
import json
import shutil

import numpy as np
import pytest

from mmnr.config import desk_config
from mmnr.ingest.bundle import ANOMALOUS, NORMAL, read_bundle, write_bundle
from mmnr.ingest.archive import load_arrays
from mmnr.ingest.manifest import load_manifest
from mmnr.ingest.synth import SynthSpec, generate_synthetic_dataset
from mmnr.pipeline import STAGES, Run, run_pipeline


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic_dataset(SynthSpec(classes=1, n_train=40, n_test=8), 3, root / "data")
    return root


def _cfg(root, **kw):
    return desk_config(out_dir=str(root / "runs"), data={"root": str(root / "data"), **kw.pop("data", {})}, **kw)


def test_runs_are_byte_identical(tiny):
    cfg = _cfg(tiny)
    a = run_pipeline(cfg, tiny / "runs" / "a")
    b = run_pipeline(cfg, tiny / "runs" / "b")
    assert (tiny / "runs/a/eval.json").read_bytes() == (tiny / "runs/b/eval.json").read_bytes()
    assert Run(cfg, tiny / "runs/a").artifact_hashes() == Run(cfg, tiny / "runs/b").artifact_hashes()
    assert a["noise"]["injected"] == 4  # ceil(0.1 * 40)


def test_stagewise_equals_run(tiny):
    cfg = _cfg(tiny)
    r = Run(cfg, tiny / "runs" / "staged")
    r.dir.mkdir(parents=True)
    for stage in STAGES:
        Run(cfg, r.dir).run_stage(stage)  # a fresh handle each time, as the CLI does
    whole = run_pipeline(cfg, tiny / "runs" / "whole")
    assert json.loads((r.dir / "eval.json").read_text()) == whole


def test_tau_zero_on_clean_data_equals_skipping(tiny):
    on = run_pipeline(_cfg(tiny, data={"noise": "clean"}, stage2={"tau": 0.0}, stage3={"tau": 0.0}),
                      tiny / "runs" / "tau0")
    off = run_pipeline(_cfg(tiny, data={"noise": "clean"}, stage2={"enabled": False}, stage3={"tau": 0.0}),
                       tiny / "runs" / "off")
    assert on["classes"]["class0"]["noise"]["kept"] == 40
    for f in ("banks/class0/rgb.mmna", "banks/class0/pc.mmna", "banks/class0/fused.mmna", "scores/class0.json"):
        assert (tiny / "runs/tau0" / f).read_bytes() == (tiny / "runs/off" / f).read_bytes()
    assert on["mean"] == off["mean"]


def test_labels_only_reach_evaluation(tiny, tmp_path):
    blind = tmp_path / "data"
    shutil.copytree(tiny / "data", blind)
    for p in sorted(blind.rglob("*.mmnr")):
        b = read_bundle(p)
        if b.label == ANOMALOUS:
            write_bundle(dataclasses.replace(b, label=NORMAL, gt_mask=None), p)
    cfg = _cfg(tiny, data={"noise": "clean"})
    seen = Run(cfg, tiny / "runs" / "seen")
    seen.dir.mkdir(parents=True)
    hid = Run(cfg.replace(data={"root": str(blind)}), tmp_path / "hidden")
    hid.dir.mkdir(parents=True)
    for stage in STAGES[:-1]:
        seen.run_stage(stage)
        hid.run_stage(stage)
    assert (seen.dir / "scores/class0.json").read_bytes() == (hid.dir / "scores/class0.json").read_bytes()
    a, b = seen.artifact_hashes(), hid.artifact_hashes()
    assert {k: v for k, v in a.items() if k.startswith(("maps", "banks"))} == \
           {k: v for k, v in b.items() if k.startswith(("maps", "banks"))}


@pytest.mark.slow
def test_defects_localized_and_bank_cleaner(one_class):
    run_pipeline(one_class.cfg, one_class.dir)
    bank = json.loads((one_class.dir / "banks/class0/bank.json").read_text())
    for b in ("rgb", "pc", "fused"):
        assert bank[b]["noise_fraction_bank"] < bank[b]["noise_fraction_input"]
    _, test = one_class.manifests("class0")
    hits = total = 0
    for s in test.samples:
        b = read_bundle(test.path(s))
        if b.label != ANOMALOUS:
            continue
        m = load_arrays(one_class.dir / "maps/class0" / f"{b.sample_id}.mmna")["s_pixel"]
        total += 1
        hits += m[b.gt_mask].max() > m[~b.gt_mask].max()
    assert total >= 10 and hits >= 0.9 * total
