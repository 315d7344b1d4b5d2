import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nref.objective import auc_judd, cc, evaluate_maps, normalized_l1, nss
from oracles import auc_brute, cc_brute, fixation_patterns, nss_brute

maps = hnp.arrays(np.float64, (4, 5), elements=st.floats(0.01, 1.0))


# -- normalized l1 -------------------------------------------------------------------


def _fd(pred, target, through_max, h=1e-7):
    if through_max:
        f = lambda p: normalized_l1(p, target)[0]
    else:
        pmax = pred.reshape(pred.shape[0], -1).max(1)[:, None, None] if pred.ndim == 3 else pred.max()
        tn = target / (target.reshape(target.shape[0], -1).max(1)[:, None, None]
                       if target.ndim == 3 else target.max())
        f = lambda p: float(np.abs(p / pmax - tn).mean())
    out = np.zeros_like(pred)
    for i in np.ndindex(pred.shape):
        up, down = pred.copy(), pred.copy()
        up[i] += h
        down[i] -= h
        out[i] = (f(up) - f(down)) / (2 * h)
    return out


@pytest.mark.parametrize("through_max", [False, True])
def test_l1_gradient_matches_finite_differences(rng, through_max):
    worst = 0.0
    for _ in range(30):
        pred = rng.uniform(0.05, 1.0, size=(2, 4, 5))
        target = rng.uniform(0.0, 1.0, size=(2, 4, 5))
        _, g = normalized_l1(pred, target, through_max=through_max)
        fd = _fd(pred, target, through_max)
        worst = max(worst, np.abs(g - fd).max() / np.abs(fd).max())
    assert worst < 1e-4


def test_l1_known_value():
    pred = np.array([[1.0, 0.5], [0.0, 0.25]])
    target = np.array([[2.0, 2.0], [0.0, 0.0]])
    loss, grad = normalized_l1(pred, target)
    assert loss == pytest.approx((0 + 0.5 + 0 + 0.25) / 4)
    np.testing.assert_array_equal(grad, np.array([[0, -1], [0, 1]]) / 4)


def test_l1_scale_invariant_and_zero_at_match(rng):
    pred = rng.uniform(0.1, 1, (6, 6))
    target = rng.uniform(0, 1, (6, 6))
    assert normalized_l1(pred * 0.3, target)[0] == pytest.approx(normalized_l1(pred, target)[0])
    assert normalized_l1(target * 4, target)[0] == pytest.approx(0, abs=1e-15)


def test_l1_zero_max_map_is_all_zeros():
    z = np.zeros((3, 3))
    t = np.eye(3)
    loss, grad = normalized_l1(z, t)
    assert loss == pytest.approx(3 / 9)
    assert np.isfinite(grad).all()
    assert normalized_l1(t, z)[0] == pytest.approx(3 / 9)


def test_l1_through_max_gradient_orthogonal_to_pred(rng):
    pred = rng.uniform(0.1, 1, (3, 5, 5))
    target = rng.uniform(0, 1, (3, 5, 5))
    _, g = normalized_l1(pred, target, through_max=True)
    for p, gi in zip(pred, g):
        assert abs(float((p * gi).sum())) < 1e-12


def test_l1_frozen_gradient_shrinks_maps_over_sparse_targets(rng):
    # most target pixels near zero: the frozen gradient points along +pred
    pred = rng.uniform(0.1, 1, (8, 8))
    target = np.zeros((8, 8))
    target[3, 4] = 1
    _, g = normalized_l1(pred, target)
    assert float((pred * g).sum()) > 0


def test_l1_batch_averages_and_keeps_dtype(rng):
    pred = rng.uniform(0.1, 1, (3, 4, 4)).astype(np.float32)
    target = rng.uniform(0, 1, (3, 4, 4)).astype(np.float32)
    loss, grad = normalized_l1(pred, target)
    singles = [normalized_l1(p, t)[0] for p, t in zip(pred, target)]
    assert loss == pytest.approx(np.mean(singles), rel=1e-6)
    assert grad.dtype == np.float32
    with pytest.raises(ValueError, match="shapes differ"):
        normalized_l1(pred, target[:2])


# -- metrics against brute force -------------------------------------------------------


def _value_grids(size, rng):
    base = [0.0, 0.5, 1.0]
    if size <= 4:
        yield from (np.array(v) for v in itertools.product(base, repeat=size))
    for _ in range(200):
        yield rng.choice([0.0, 0.25, 0.5, 1.0], size=size)
        yield rng.normal(size=size)


@pytest.mark.parametrize("side", [2, 3])
def test_metrics_match_brute_force_exhaustively(rng, side):
    size = side * side
    worst = 0.0
    grids = list(_value_grids(size, rng))
    for fix in fixation_patterns(size):
        f = fix.reshape(side, side)
        for vals in grids[:: 1 if side == 2 else 25]:
            p = vals.reshape(side, side)
            worst = max(worst, abs(nss(p, f) - nss_brute(p, f)), abs(auc_judd(p, f) - auc_brute(p, f)))
    assert worst < 1e-9
    for a, b in zip(grids[::3], grids[1::3]):
        if np.ptp(a) > 0 and np.ptp(b) > 0:
            assert abs(cc(a.reshape(side, side), b.reshape(side, side)) - cc_brute(a, b)) < 1e-9


def test_metric_known_values():
    assert cc(np.array([[0, 1], [0, 1]]), np.array([[0, 1], [1, 0]])) == pytest.approx(0, abs=1e-15)
    p = np.array([[0.0, 1.0], [0.0, 0.0]])
    f = np.array([[0, 1], [0, 0]])
    # z-score of the single 1 among three 0s: (1 - 0.25) / sqrt(0.1875)
    assert nss(p, f) == pytest.approx(0.75 / np.sqrt(0.1875))
    assert auc_judd(p, f) == pytest.approx(1.0)
    # fixations on the three zeros: the single threshold 0 admits every pixel
    assert auc_judd(p, 1 - f) == pytest.approx(0.5)


def test_metric_conventions():
    flat = np.full((3, 3), 0.2)
    f = np.eye(3, dtype=np.uint8)
    assert nss(flat, f) == 0.0
    assert auc_judd(flat, f) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="constant"):
        cc(flat, np.eye(3))
    with pytest.raises(ValueError, match="at least one fixation"):
        nss(np.eye(3), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="both fixated and non-fixated"):
        auc_judd(np.eye(3), np.ones((3, 3)))


def test_evaluate_maps_scores_constant_prediction_cc_zero(rng):
    preds = np.stack([np.full((4, 4), 0.5), rng.random((4, 4))])
    fix = np.zeros((2, 4, 4), np.uint8)
    fix[:, 1, 2] = 1
    sal = rng.random((2, 4, 4))
    out = evaluate_maps(preds, fix, sal)
    assert out["cc"][0] == 0.0 and out["nss"][0] == 0.0
    assert out["cc"][1] == pytest.approx(cc(preds[1], sal[1]))


# -- invariances -----------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(maps, st.floats(0.01, 100), st.floats(-10, 10), st.integers(0, 19))
def test_nss_positive_affine_invariance(p, a, b, k):
    f = np.zeros(20, np.uint8)
    f[k] = 1
    f = f.reshape(4, 5)
    if np.ptp(p) < 1e-6:
        return
    assert nss(a * p + b, f) == pytest.approx(nss(p, f), abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(maps, st.integers(1, 2**20 - 2))
def test_auc_invariant_under_increasing_transform(p, bits):
    f = np.array([(bits >> i) & 1 for i in range(20)], np.uint8).reshape(4, 5)
    assert auc_judd(np.exp(3 * p) + 2, f) == pytest.approx(auc_judd(p, f), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(maps, maps, st.floats(0.1, 10), st.floats(-5, 5))
def test_cc_symmetric_and_affine_invariant(a, b, s, t):
    if np.ptp(a) < 1e-6 or np.ptp(b) < 1e-6:
        return
    assert cc(a, b) == pytest.approx(cc(b, a), abs=1e-12)
    assert cc(s * a + t, b) == pytest.approx(cc(a, b), abs=1e-9)
    assert -1 <= cc(a, b) <= 1
