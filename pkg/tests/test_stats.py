import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from nref.experiment import RunRecord
from nref.objective import MetricTriple
from nref.stats import aggregate, format_mean_std, paired_t_test, permutation_test, significance
from oracles import sign_flip_exact


def _rec(proc, nss, n=10, seed=0):
    return RunRecord("s", proc, n, seed, MetricTriple(nss, 0.5, 0.1))


def test_format_mean_std():
    assert format_mean_std(1.3330, 0.0084) == "1.3330±0.0084"
    assert format_mean_std(0.5, 0, digits=2) == "0.50±0.00"


def test_aggregate_values():
    out = aggregate([_rec("ft", 1.0), _rec("ft", 2.0, seed=1), _rec("tr", 0.7)])
    ft = out[("ft", 10)]
    assert ft.count == 2 and ft.mean.nss == 1.5
    assert ft.std.nss == pytest.approx(np.sqrt(0.5))
    assert out[("tr", 10)].std == MetricTriple(0.0, 0.0, 0.0)
    same = aggregate([_rec("ft", 1.25, seed=s) for s in range(4)])
    assert same[("ft", 10)].std.nss == 0
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8), st.randoms())
def test_aggregate_order_invariant(values, rnd):
    recs = [_rec("ft", v, seed=i) for i, v in enumerate(values)]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    assert aggregate(recs) == aggregate(shuffled)


def test_t_test_worked_example():
    # differences {1, 2, 3}: t = 2 * sqrt(3), two-sided with 2 dof
    p = paired_t_test([2, 4, 6], [1, 2, 3])
    assert p == pytest.approx(1 - 2 * np.sqrt(3) / np.sqrt(14), abs=1e-12)
    assert p == pytest.approx(0.0742, abs=1e-3)


def test_t_test_against_scipy(rng):
    for _ in range(20):
        a, b = rng.normal(size=12), rng.normal(size=12)
        assert paired_t_test(a, b) == pytest.approx(sps.ttest_rel(a, b).pvalue, rel=1e-10)


def test_t_test_errors():
    b = np.array([0.1, 0.7, 0.3])
    with pytest.raises(ValueError, match="zero variance"):
        paired_t_test(b + 0.37, b)
    with pytest.raises(ValueError, match="zero variance"):
        paired_t_test(b, b)
    with pytest.raises(ValueError, match="at least 2"):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError, match="length"):
        paired_t_test([1.0, 2.0], [2.0])


def test_t_test_null_calibration(rng):
    ps = [paired_t_test(rng.normal(size=15), rng.normal(size=15)) for _ in range(400)]
    assert sps.kstest(ps, "uniform").pvalue > 0.001
    assert all(0 < p <= 1 for p in ps)


def test_permutation_matches_exhaustive_enumeration(rng):
    iters = 20000
    for n in (3, 6, 10):
        d = rng.normal(0.3, 1, size=n)
        exact = sign_flip_exact(d)
        p = permutation_test(d, np.zeros(n), iters, np.random.default_rng(n))
        est = (p * (iters + 1) - 1) / iters
        sigma = np.sqrt(exact * (1 - exact) / iters)
        assert abs(est - exact) <= 3 * sigma + 1e-12


def test_permutation_equal_samples_and_determinism(rng):
    a = rng.normal(size=7)
    assert permutation_test(a, a, 500, np.random.default_rng(0)) == 1.0
    b = rng.normal(size=7)
    p1 = permutation_test(a, b, 999, np.random.default_rng(4))
    p2 = permutation_test(a, b, 999, np.random.default_rng(4))
    assert p1 == p2 and 0 < p1 <= 1
    with pytest.raises(ValueError):
        permutation_test(a, b, 0, np.random.default_rng(0))


def test_significance_bundle(rng):
    a = rng.normal(size=9)
    out = significance(a, a, 100, np.random.default_rng(0))
    assert out["t_test"] is None and out["permutation"] == 1.0
    out = significance(a + rng.normal(size=9), a, 100, np.random.default_rng(0))
    assert 0 < out["t_test"] < 1
