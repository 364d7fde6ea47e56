"""Acceptance suite: one test per criterion, each recording a PASS / FAIL line.

The end-to-end criteria (denoising direction, protocol ordering, determinism)
share one generated five-class dataset and four pipeline runs.
"""

import json
import math
import time

import numpy as np
import pytest

from oracles import (
    grad_rel_error,
    naive_ocsvm_objective,
    naive_uff_loss,
    oracle_aggregate,
    oracle_aupro,
    oracle_auroc,
    oracle_grad,
    oracle_kcenter,
    oracle_lof,
)

from mmnr.cli import main
from mmnr.config import desk_config, dump_config
from mmnr.coreset import coverage_radius, greedy_coreset, lof
from mmnr.decision import ocsvm_subgradient
from mmnr.fuse import centers_from_grid, idw_weights, init_head, interpolate_point_features, loss_and_grads
from mmnr.ingest import BundleError, FeatureBundle, decode_bundle, encode_bundle, read_bundle, write_bundle
from mmnr.ingest.bundle import ANOMALOUS, NORMAL, MagicMismatch, TruncatedBlob, UnsupportedVersion
from mmnr.ingest.synth import SynthSpec, generate_synthetic_dataset
from mmnr.metrics import aupro, auroc
from mmnr.patching import build_masks, default_kernels
from mmnr.stage2 import PatchScoreField, aggregate_scores
from mmnr.tensor import FeatureGrid, OrganizedPointCloud


# -- 1. LOF ------------------------------------------------------------------------------

def test_c01_lof_matches_oracle(criterion):
    rng = np.random.default_rng(101)
    worst, spent = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(20, 501))
        x = rng.standard_normal((n, int(rng.choice([2, 8, 16]))))
        k = int(rng.choice([3, 5, 10]))
        t = time.perf_counter()
        eta = lof(x, k).eta
        spent += time.perf_counter() - t
        worst = max(worst, float(np.abs(eta - oracle_lof(x, k)).max()))
    ok = worst < 1e-9 and spent < 10.0
    assert criterion(1, ok, f"max |err| {worst:.2e} over 50 instances, {spent:.2f}s")


# -- 2. window aggregation -------------------------------------------------------------------

def test_c02_aggregation_matches_oracle(criterion):
    rng = np.random.default_rng(202)
    worst, spent = 0.0, 0.0
    for i in range(20):
        h, w = int(rng.integers(8, 65)), int(rng.integers(8, 65))
        masks = build_masks(h, w, default_kernels(min(h, w)))
        for scale in ("m", "s"):
            ms = masks[scale]
            keep = np.flatnonzero(rng.random(len(ms)) < 0.8)
            field = PatchScoreField(scale, keep, rng.random(len(keep)))
            if i % 2:
                weights = rng.random((h, w))
                wfun = lambda j, r, c: weights[r, c]
            else:  # one weight block per window
                weights = [rng.random((win.r1 - win.r0, win.c1 - win.c0)) for win in ms.windows]
                wfun = lambda j, r, c: weights[keep[j]][r - ms.windows[keep[j]].r0, c - ms.windows[keep[j]].c0]
            t = time.perf_counter()
            got = aggregate_scores(field, weights, ms)
            spent += time.perf_counter() - t
            wins = [(ms.windows[j].r0, ms.windows[j].r1, ms.windows[j].c0, ms.windows[j].c1, s)
                    for j, s in zip(keep, field.scores)]
            want, cov = oracle_aggregate(h, w, wins, wfun)
            assert np.array_equal(got.covered, cov)
            worst = max(worst, float(np.abs(got.scores - want).max()))
    ok = worst <= 1e-12 and spent < 5.0
    assert criterion(2, ok, f"max |err| {worst:.2e} over 20 maps x 2 scales, {spent:.2f}s")


# -- 3. interpolation -------------------------------------------------------------------------

def test_c03_interpolation_contract(criterion):
    rng = np.random.default_rng(303)
    worst, constant = 0.0, True
    for _ in range(20):
        h, w = int(rng.integers(4, 33)), int(rng.integers(4, 33))
        valid = rng.random((h, w)) > 0.2
        valid[0, 0] = True
        cloud = OrganizedPointCloud(rng.random((h, w, 3)), valid)
        feats = rng.standard_normal((h, w, 6))
        cf = centers_from_grid(cloud, feats, valid, int(rng.integers(2, 64)))
        _, wts = idw_weights(cloud.positions[valid], cf.centers)
        worst = max(worst, float(np.abs(wts.sum(axis=1) - 1.0).max()))
        one = centers_from_grid(cloud, feats, valid, 1)
        g = interpolate_point_features(cloud, one)
        constant &= bool(np.all(g.patches[valid] == one.features[0]))
    ok = worst < 1e-9 and constant
    assert criterion(3, ok, f"max |sum w - 1| {worst:.2e}, K=1 constant exactly: {constant}")


# -- 4. gradients ----------------------------------------------------------------------------

def test_c04_gradients(criterion):
    t = time.perf_counter()
    worst_uff = worst_svm = 0.0
    for seed in range(10):
        rng = np.random.default_rng(400 + seed)
        head = init_head(6, 5, seed, out_dim=4)
        a, b = rng.standard_normal((8, 6)), rng.standard_normal((8, 5))
        _, grads = loss_and_grads(head, a, b)
        params = {k: v.copy() for k, v in head.params.items()}
        num = oracle_grad(lambda p: naive_uff_loss(p, a, b, head.temperature), params)
        worst_uff = max(worst_uff, grad_rel_error(grads, num))

        x, nu = rng.random((16, 3)), 0.5
        wv = rng.standard_normal(3)
        margins = np.sort(x @ wv)
        rho = float((margins[4] + margins[5]) / 2)  # between two samples, away from every kink
        gw, gr = ocsvm_subgradient(wv, rho, x, nu)
        svm = {"w": wv.copy(), "rho": np.array([rho])}
        num = oracle_grad(lambda p: naive_ocsvm_objective(p["w"], float(p["rho"][0]), x, nu), svm)
        worst_svm = max(worst_svm, grad_rel_error({"w": gw, "rho": np.array([gr])}, num))
    spent = time.perf_counter() - t
    ok = worst_uff < 1e-4 and worst_svm < 1e-4 and spent < 30.0
    assert criterion(4, ok, f"max rel err UFF {worst_uff:.2e}, OCSVM {worst_svm:.2e}, {spent:.2f}s")


# -- 5. metrics ------------------------------------------------------------------------------

def test_c05_metrics(criterion):
    rng = np.random.default_rng(505)
    worst_auc = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 200))
        s = rng.integers(0, 10, n).astype(float)  # ties everywhere
        y = rng.random(n) < 0.4
        y[0], y[-1] = True, False
        worst_auc = max(worst_auc, abs(auroc(s, y) - oracle_auroc(s, y)))
    worst_pro = 0.0
    for _ in range(20):
        h, w = int(rng.integers(4, 65)), int(rng.integers(4, 65))
        k = int(rng.integers(1, 3))
        maps = [np.round(rng.random((h, w)), 2) for _ in range(k)]
        gts = [np.zeros((h, w), bool) for _ in range(k)]
        for g in gts:
            r, c = int(rng.integers(0, h - 2)), int(rng.integers(0, w - 2))
            g[r:r + int(rng.integers(1, h - r)), c:c + int(rng.integers(1, w - c))] = True
        gts[0][-1, -1] = gts[0][-1, -1] if gts[0].sum() < h * w - 1 else False
        worst_pro = max(worst_pro, abs(aupro(maps, gts) - oracle_aupro(maps, gts)))
    gt = np.zeros((16, 16), bool)
    gt[3:6, 4:9] = gt[10:12, 1:3] = True
    perfect = auroc(gt.ravel() * 1.0, gt.ravel()) == 1.0 and aupro([gt * 2.0], [gt]) == 1.0
    ok = worst_auc == 0.0 and worst_pro < 1e-3 and perfect
    assert criterion(5, ok, f"AUROC max err {worst_auc:.1e}, AUPRO max err {worst_pro:.2e}, perfect -> 1.0: {perfect}")


# -- 6 / 7 / 8. end to end ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def protocols(tmp_path_factory):
    """Overlap and Non-Overlap runs with denoising on and off, all through the command line."""
    root = tmp_path_factory.mktemp("acceptance")
    t = time.perf_counter()
    generate_synthetic_dataset(SynthSpec(classes=5, n_train=100, n_test=40), 0, root / "data")
    gen = time.perf_counter() - t
    out, secs = {}, {}
    for noise in ("overlap", "non_overlap"):
        for denoise in (True, False):
            cfg = desk_config(out_dir=str(root / "runs"), data={"root": str(root / "data"), "noise": noise},
                              stage2={"enabled": denoise})
            path = root / f"{noise}_{denoise}.toml"
            path.write_text(dump_config(cfg))
            t = time.perf_counter()
            assert main(["run", "--config", str(path), "--run-dir", str(root / f"{noise}_{denoise}")]) == 0
            secs[noise, denoise] = time.perf_counter() - t
            out[noise, denoise] = json.loads((root / f"{noise}_{denoise}" / "eval.json").read_text())
    return {"root": root, "eval": out, "secs": secs, "gen": gen}


def _per_class(ev, key="i_auroc"):
    return {c: v[key] for c, v in sorted(ev["classes"].items())}


@pytest.mark.slow
def test_c06_denoising_direction(protocols, criterion):
    on, off = protocols["eval"]["overlap", True], protocols["eval"]["overlap", False]
    before, after = off["noise"]["noise_level_after"], on["noise"]["noise_level_after"]
    reduction = 1.0 - after / before
    a, b = _per_class(on), _per_class(off)
    wins = sum(a[c] >= b[c] for c in a)
    spent = protocols["gen"] + protocols["secs"]["overlap", True] + protocols["secs"]["overlap", False]
    ok = reduction >= 0.5 and wins >= 4 and len(a) == 5 and spent < 300
    detail = (f"noise level {before:.4f} -> {after:.4f} ({reduction:.0%} less), "
              f"I-AUROC on >= off on {wins}/5 classes, {spent:.0f}s")
    print("I-AUROC on ", [round(v, 4) for v in a.values()])
    print("I-AUROC off", [round(v, 4) for v in b.values()])
    assert criterion(6, ok, detail)


@pytest.mark.slow
def test_c07_protocol_ordering(protocols, criterion):
    ev = protocols["eval"]
    i = {k: v["mean"]["i_auroc"] for k, v in ev.items()}
    gap_off = i["non_overlap", False] - i["overlap", False]
    gap_on = i["non_overlap", True] - i["overlap", True]
    ok = gap_off > 0 and gap_on <= 0.5 * gap_off
    detail = (f"off: overlap {i['overlap', False]:.4f} vs non-overlap {i['non_overlap', False]:.4f}; "
              f"on: {i['overlap', True]:.4f} vs {i['non_overlap', True]:.4f}; gap {gap_off:+.4f} -> {gap_on:+.4f}")
    assert criterion(7, ok, detail)


@pytest.mark.slow
def test_c08_determinism(protocols, criterion):
    root = protocols["root"]
    first = root / "overlap_True"
    again = root / "overlap_True_again"
    assert main(["run", "--config", str(root / "overlap_True.toml"), "--run-dir", str(again)]) == 0
    same_eval = (first / "eval.json").read_bytes() == (again / "eval.json").read_bytes()
    same_art = (first / "artifacts.json").read_bytes() == (again / "artifacts.json").read_bytes()
    n = len(json.loads((first / "artifacts.json").read_text()))
    assert criterion(8, same_eval and same_art, f"eval.json identical: {same_eval}, {n} artifact hashes identical: {same_art}")


# -- 9. coreset ---------------------------------------------------------------------------------

def test_c09_coreset_guarantee(criterion):
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(4, 13))
        x = rng.random((n, int(rng.integers(2, 5))))
        m = int(rng.integers(1, min(4, n - 1) + 1))
        pick = greedy_coreset(x, m / n)
        assert len(pick) == m
        opt = oracle_kcenter(x, m)
        worst = max(worst, coverage_radius(x, pick) / opt if opt > 0 else 1.0)
    monotone = True
    for seed in range(3):
        x = np.random.default_rng(seed).standard_normal((400, 8))
        radii = [coverage_radius(x, greedy_coreset(x, f)) for f in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)]
        monotone &= all(a >= b for a, b in zip(radii, radii[1:]))
    ok = worst <= 2.0 and monotone
    assert criterion(9, ok, f"worst greedy / optimal radius {worst:.3f} over 20 instances, monotone: {monotone}")


# -- 10. bundle format ------------------------------------------------------------------------------

def _random_bundle(rng, i):
    h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
    d_rgb, d_pc = int(rng.integers(1, 33)), int(rng.integers(1, 33))
    f32 = lambda *s: rng.standard_normal(s).astype(np.float32).astype(np.float64)
    tok = rng.random() < 0.5
    rgb = FeatureGrid(f32(h, w, d_rgb), rng.random((h, w)) > 0.3, f32(d_rgb) if tok else None)
    pc = FeatureGrid(f32(h, w, d_pc), rng.random((h, w)) > 0.3, f32(d_pc) if rng.random() < 0.5 else None)
    cloud = OrganizedPointCloud(f32(h, w, 3), rng.random((h, w)) > 0.2)
    mask = rng.random((h, w)) > 0.6
    if rng.random() < 0.5 and mask.any():
        return FeatureBundle(rgb, pc, cloud, f"sample-{i}-é", ANOMALOUS, mask)
    return FeatureBundle(rgb, pc, cloud, f"sample-{i}", NORMAL, None)


def test_c10_format_round_trip(tmp_path, criterion):
    rng = np.random.default_rng(1010)
    exact = 0
    untyped = []
    for i in range(100):
        b = _random_bundle(rng, i)
        write_bundle(b, tmp_path / f"{i}.mmnr")
        back = read_bundle(tmp_path / f"{i}.mmnr")
        exact += back == b and encode_bundle(back) == encode_bundle(b)
        data = encode_bundle(b)
        broken = [b"XXXX" + data[4:], data[:4] + b"\x07\x00" + data[6:], data[:int(rng.integers(0, 24))],
                  data[:-1]]
        for _ in range(5):
            d = bytearray(data)
            d[int(rng.integers(0, 24))] = int(rng.integers(0, 256))
            broken.append(bytes(d))
        for blob in broken:
            try:
                decode_bundle(blob)
            except BundleError:
                pass
            except Exception as e:  # noqa: BLE001 - any other exception type is a failure
                untyped.append(type(e).__name__)
    data = encode_bundle(_random_bundle(rng, 0))
    typed = True
    for blob, err in ((b"XXXX" + data[4:], MagicMismatch), (data[:4] + b"\x09\x00" + data[6:], UnsupportedVersion),
                      (data[:-3], TruncatedBlob)):
        try:
            decode_bundle(blob)
            typed = False
        except err:
            pass
    ok = exact == 100 and not untyped and typed
    assert criterion(10, ok, f"{exact}/100 bit-exact, untyped errors {sorted(set(untyped))}, specific types: {typed}")
