import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import components8, oracle_aupro, oracle_auroc

from mmnr.metrics import aupro, auroc, connected_components, evaluate, pro_curve


def test_auroc_examples():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5
    assert auroc([0.1, 0.6, 0.4, 0.9], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=80))
def test_auroc_matches_pair_counting(pairs):
    s = [p[0] for p in pairs]  # small integer range forces ties
    y = [p[1] for p in pairs]
    if all(y) or not any(y):
        return
    assert abs(auroc(s, y) - oracle_auroc(s, y)) < 1e-12


def _as_sets(comps):
    return sorted(sorted(map(tuple, c)) for c in comps)


def test_components():
    rect = np.zeros((6, 6), bool)
    rect[1:3, 1:5] = True
    assert len(connected_components(rect)) == 1
    diag = np.eye(5, dtype=bool)
    assert len(connected_components(diag)) == 1  # corners touch under 8-connectivity
    checker = (np.indices((6, 6)).sum(axis=0) % 2).astype(bool)
    assert len(connected_components(checker)) == 1
    two = np.zeros((5, 5), bool)
    two[0, 0] = two[4, 4] = True
    assert len(connected_components(two)) == 2


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_components_match_bfs(h, w, seed):
    m = np.random.default_rng(seed).random((h, w)) < 0.4
    assert _as_sets(connected_components(m)) == _as_sets(components8(m))


def test_aupro_perfect_is_one():
    gt = np.zeros((8, 8), bool)
    gt[2:4, 2:5] = True
    assert aupro([gt.astype(float)], [gt]) == 1.0


def test_aupro_constant_map():
    gt = np.zeros((6, 6), bool)
    gt[0, 0] = True
    m = np.full((6, 6), 0.3)
    assert aupro([m], [gt]) == pytest.approx(oracle_aupro([m], [gt]), abs=1e-12)
    # a single jump from (0, 0) to (1, 1), interpolated at 0.3
    assert aupro([m], [gt]) == pytest.approx(0.15)


@given(st.integers(1, 3), st.integers(2, 8), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_aupro_matches_oracle(n, h, w, seed):
    rng = np.random.default_rng(seed)
    maps, gts = [], []
    for _ in range(n):
        maps.append(np.round(rng.random((h, w)), 1))  # ties across maps
        gts.append(rng.random((h, w)) < 0.3)
    gts[0][0, 0], gts[0][-1, -1] = True, False
    for lim in (0.3, 1.0):
        assert abs(aupro(maps, gts, lim) - oracle_aupro(maps, gts, lim)) < 1e-3


def test_pro_curve_ends_at_one():
    rng = np.random.default_rng(0)
    gt = rng.random((5, 5)) < 0.3
    gt[0, 0], gt[4, 4] = True, False
    fpr, pro = pro_curve([rng.random((5, 5))], [gt])
    assert fpr[0] == pro[0] == 0.0
    assert fpr[-1] == pytest.approx(1.0) and pro[-1] == pytest.approx(1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(pro) >= -1e-15)


def test_evaluate_bundle():
    gt = np.zeros((4, 4), bool)
    gt[1, 1] = True
    r = evaluate([0.1, 0.9], [0, 1], [np.zeros((4, 4)), gt * 1.0], [np.zeros((4, 4), bool), gt])
    assert r.i_auroc == 1.0 and r.p_auroc == 1.0 and r.aupro == 1.0
    assert set(r.to_json()) == {"i_auroc", "p_auroc", "aupro", "fpr_limit"}
