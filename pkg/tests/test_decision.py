import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_ocsvm_objective

from mmnr.coreset import MemoryBank
from mmnr.decision import (
    W_INIT,
    Ocsvm,
    decide,
    ocsvm_objective,
    ocsvm_subgradient,
    phi,
    psi,
    psi_map,
    train_ocsvm,
)
from mmnr.tensor import NumericFailure


def _bank(entries, weights=None):
    e = np.asarray(entries, float)
    w = np.ones(len(e)) if weights is None else np.asarray(weights, float)
    return MemoryBank(e, w, np.arange(len(e)))


def test_phi_examples():
    bank = _bank([[0.0, 0.0], [1.0, 0.0]], [2.0, 3.0])
    assert phi(bank, [[1.0, 0.0]]) == 0.0
    assert phi(bank, [[1.0, 0.5]]) == pytest.approx(3.0 * 0.5)
    bank1 = _bank([[0.0]])
    assert phi(bank1, [[0.1], [0.5], [0.2]]) == pytest.approx(0.5)


def test_psi_examples():
    bank = _bank([[0.0, 0.0], [1.0, 1.0]])
    grid = np.array([[[0.0, 0.0], [1.0, 1.0]], [[1.0, 1.0], [0.0, 0.0]]])
    valid = np.ones((2, 2), bool)
    assert not psi_map(bank, grid, valid).any()
    grid2 = grid.copy()
    grid2[1, 0] = [1.0, 1.3]
    m = psi_map(bank, grid2, valid)
    assert np.flatnonzero(m.ravel()).tolist() == [2] and m[1, 0] == pytest.approx(0.3)
    valid[0, 0] = False
    assert psi_map(bank, grid2, valid)[0, 0] == 0.0


@given(st.integers(1, 30), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_psi_matches_all_pairs(m, n, seed):
    rng = np.random.default_rng(seed)
    e, f = rng.standard_normal((m, 4)), rng.standard_normal((n, 4))
    want = [min(np.sqrt(((fi - ej) ** 2).sum()) for ej in e) for fi in f]
    assert np.allclose(psi(_bank(e), f), want, atol=1e-12)


def test_bank_dim_mismatch():
    with pytest.raises(ValueError):
        phi(_bank([[0.0, 0.0]]), [[1.0]])


def test_ocsvm_objective_matches_naive(rng):
    x = rng.random((20, 3))
    w = rng.standard_normal(3)
    assert ocsvm_objective(w, 0.4, x, 0.3) == pytest.approx(naive_ocsvm_objective(w, 0.4, x, 0.3), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_ocsvm_subgradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x, w, rho, nu = rng.random((15, 3)), rng.standard_normal(3), float(rng.random()), 0.5
    margins = rho - x @ w
    assert np.abs(margins).min() > 1e-4  # away from every hinge kink
    gw, gr = ocsvm_subgradient(w, rho, x, nu)
    eps = 1e-5
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        num = (naive_ocsvm_objective(w + d, rho, x, nu) - naive_ocsvm_objective(w - d, rho, x, nu)) / (2 * eps)
        assert abs(num - gw[i]) <= 1e-4 * max(abs(num), abs(gw[i]), 1e-6)
    num = (naive_ocsvm_objective(w, rho + eps, x, nu) - naive_ocsvm_objective(w, rho - eps, x, nu)) / (2 * eps)
    assert abs(num - gr) <= 1e-4 * max(abs(num), abs(gr), 1e-6)


def test_ocsvm_lr_zero_is_init(rng):
    m = train_ocsvm(rng.random((10, 3)), lr=0.0)
    assert np.array_equal(m.w, W_INIT) and m.rho == 0.0


@pytest.mark.parametrize("jitter", [0.0, 1e-9])
def test_ocsvm_constant_inputs(jitter):
    rng = np.random.default_rng(0)
    v = np.array([0.3, 0.7, 0.2])
    x = v + jitter * rng.standard_normal((25, 3))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m = train_ocsvm(x)
    assert m.fallback and caught
    assert abs(m.w @ v - m.rho) < 1e-3


def test_ocsvm_rejects_bad_input():
    with pytest.raises(NumericFailure):
        train_ocsvm(np.array([[np.nan, 0, 0], [1, 1, 1]]))
    with pytest.raises(ValueError):
        train_ocsvm(np.ones((5, 2)))
    m = Ocsvm(np.array([1.0, 2, 3]), 0.5)
    assert Ocsvm.from_json(m.to_json()).to_json() == m.to_json()


def test_sgd_is_seeded(rng):
    x = rng.random((50, 3))
    a, b = train_ocsvm(x, lr=0.01, seed=3), train_ocsvm(x, lr=0.01, seed=3)
    assert np.array_equal(a.w, b.w) and a.rho == b.rho
    s = train_ocsvm(x, lr=0.01, standardize=True)
    assert np.all(s.scale > 0)


def test_decide_zero_psi_gives_minus_rho():
    svm = Ocsvm(np.array([0.2, 0.5, 0.3]), 0.7)
    psis = {b: np.zeros((4, 4)) for b in ("rgb", "pc", "fused")}
    out = decide({"rgb": 0.0, "pc": 0.0, "fused": 0.0}, psis, svm, svm, (8, 8))
    assert out.s_pixel.shape == (8, 8) and np.allclose(out.s_pixel, -0.7)
    assert out.s_image == pytest.approx(-0.7)


@given(st.lists(st.floats(0, 5), min_size=3, max_size=3), st.integers(0, 2), st.floats(0, 3))
def test_image_score_monotone(phis, which, bump):
    svm = Ocsvm(np.array([0.1, 0.6, 0.3]), 0.2)
    psis = {b: np.zeros((2, 2)) for b in ("rgb", "pc", "fused")}
    keys = ("rgb", "pc", "fused")
    base = decide(dict(zip(keys, phis)), psis, svm, svm, (2, 2)).s_image
    up = list(phis)
    up[which] += bump
    assert decide(dict(zip(keys, up)), psis, svm, svm, (2, 2)).s_image >= base


def test_decide_needs_all_banks():
    svm = Ocsvm()
    with pytest.raises(ValueError):
        decide({"rgb": 0.0}, {"rgb": np.zeros((2, 2))}, svm, svm, (2, 2))
