import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from hslg.stats import (
    DomainError,
    digamma,
    ess,
    kolmogorov_sf,
    ks_dominance,
    ks_one_sample,
    ks_two_sample,
    log_sum_exp,
    log_sum_exp_rows,
    modulus_of_continuity,
    normalized_weights,
    trigamma,
    weighted_ecdf,
)

finite = st.floats(min_value=-700, max_value=700, allow_nan=False)


def test_log_sum_exp_pair_of_zeros():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(0.693147, abs=1e-6)


def test_log_sum_exp_single_value():
    assert log_sum_exp([3.25]) == 3.25


def test_log_sum_exp_large_negative():
    assert abs(log_sum_exp([-1000.0, -1001.0]) - (-1000.0 + math.log1p(math.exp(-1.0)))) < 1e-12


def test_log_sum_exp_all_neg_inf_and_empty():
    assert log_sum_exp([-math.inf, -math.inf]) == -math.inf
    with pytest.raises(DomainError):
        log_sum_exp([])


def test_log_sum_exp_rows_matches_scalar():
    a = np.array([[0.0, 1.0, -2.0], [-np.inf, -np.inf, -np.inf], [5.0, -np.inf, 5.0]])
    out = log_sum_exp_rows(a)
    for row, v in zip(a, out):
        assert v == log_sum_exp(list(row)) or (v == -np.inf and log_sum_exp(list(row)) == -np.inf)


@given(st.lists(finite, min_size=1, max_size=20), st.randoms(use_true_random=False),
       st.floats(min_value=-100, max_value=100))
def test_log_sum_exp_permutation_and_translation(vals, rnd, c):
    base = log_sum_exp(vals)
    shuffled = list(vals)
    rnd.shuffle(shuffled)
    assert abs(log_sum_exp(shuffled) - base) <= 1e-12 * max(1.0, abs(base))
    shifted = log_sum_exp([v + c for v in vals])
    assert abs(shifted - (base + c)) <= 1e-12 * max(1.0, abs(base), abs(c)) * 4


def test_ess_examples():
    assert ess(np.zeros(7)) == pytest.approx(7.0)
    assert ess([0.0, -np.inf, -np.inf]) == pytest.approx(1.0)
    assert ess([0.0, math.log(3.0)]) == pytest.approx(1.6, rel=1e-12)
    with pytest.raises(DomainError):
        ess([-np.inf, -np.inf])


@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=50))
def test_ess_bounds(lw):
    e = ess(lw)
    assert 1.0 - 1e-9 <= e <= len(lw) + 1e-9


def test_normalized_weights_sum_to_one():
    w = normalized_weights([0.0, 1.0, -np.inf])
    assert w.sum() == pytest.approx(1.0)
    assert w[2] == 0.0


def test_digamma_reference_values():
    assert digamma(1.0) == pytest.approx(-0.5772156649, abs=1e-10)
    assert trigamma(1.0) == pytest.approx(math.pi ** 2 / 6, rel=1e-10)
    with pytest.raises(DomainError):
        digamma(0.0)
    with pytest.raises(DomainError):
        trigamma(-1.0)


@given(st.floats(min_value=1e-3, max_value=1e4))
def test_digamma_recurrence(x):
    assert abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) < 1e-12 * max(1.0, 1.0 / x)


@pytest.mark.parametrize("x", [0.01, 0.3, 1.7, 12.0, 250.0])
def test_polygamma_against_scipy(x):
    assert digamma(x) == pytest.approx(special.digamma(x), rel=1e-10, abs=1e-12)
    assert trigamma(x) == pytest.approx(special.polygamma(1, x), rel=1e-10)


def test_digamma_vectorised():
    x = np.array([0.5, 2.0, 9.0])
    assert np.allclose(digamma(x), special.digamma(x), rtol=1e-10)


def test_ks_two_sample_examples():
    assert ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).statistic == 0.0
    assert ks_two_sample([1.0, 2.0], [5.0, 6.0]).statistic == 1.0
    assert ks_two_sample([1.0, 2.0], [1.5, 2.5]).statistic == pytest.approx(0.5)


def test_ks_two_sample_matches_scipy():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=300), rng.normal(0.2, 1.0, size=200)
    rep = ks_two_sample(x, y)
    ref = sps.ks_2samp(x, y, method="asymp")
    assert rep.statistic == pytest.approx(ref.statistic, abs=1e-15)
    assert rep.p_approx == pytest.approx(ref.pvalue, rel=0.05)


def test_ks_two_sample_weighted_uses_threshold():
    rep = ks_two_sample([1.0, 2.0], [1.0, 2.0], weights_x=[1.0, 3.0], threshold=0.3)
    assert rep.p_approx is None
    assert rep.statistic == pytest.approx(0.25)
    assert rep.verdict == "pass"
    with pytest.raises(DomainError):
        ks_two_sample([1.0], [1.0], weights_x=[-1.0])
    with pytest.raises(DomainError):
        ks_two_sample([1.0, 2.0], [1.0], weights_x=[0.0, 0.0])


ints = st.lists(st.integers(-1000, 1000), min_size=1, max_size=30)


@given(ints, ints)
def test_ks_invariant_under_increasing_map(xs, ys):
    # integer samples keep exp(x / 100) strictly increasing in floating point
    a = ks_two_sample(np.asarray(xs, float), np.asarray(ys, float)).statistic
    b = ks_two_sample(np.exp(np.asarray(xs) / 100), np.exp(np.asarray(ys) / 100)).statistic
    assert 0.0 <= a <= 1.0
    assert abs(a - b) < 1e-12


def test_ks_one_sample_examples():
    assert ks_one_sample([0.0], sps.norm.cdf).statistic == pytest.approx(0.5)
    atom = lambda v: (np.asarray(v) >= 2.0).astype(float)
    assert ks_one_sample([2.0, 2.0, 2.0], atom).statistic == 0.0
    with pytest.raises(DomainError):
        ks_one_sample([0.5], lambda v: np.full(np.shape(v), 1.5))


def test_ks_one_sample_calibration():
    # DKW: P(D > 0.02) <= 2 exp(-2 n 0.02^2) ~ 7e-4 at n = 1e4
    hits = 0
    for seed in range(20):
        u = np.random.default_rng(seed).random(10_000)
        hits += ks_one_sample(u, lambda v: np.clip(v, 0, 1)).statistic >= 0.02
    assert hits == 0


def test_kolmogorov_sf_values():
    assert kolmogorov_sf(0.0) == 1.0
    assert kolmogorov_sf(1.0) == pytest.approx(sps.kstwobign.sf(1.0), rel=1e-12)
    assert kolmogorov_sf(1.36) == pytest.approx(0.0494, abs=1e-3)


def test_ks_dominance():
    rng = np.random.default_rng(1)
    lo, hi = rng.normal(size=2000), rng.normal(1.0, 1.0, size=2000)
    assert ks_dominance(lo, hi).verdict == "pass"
    assert ks_dominance(hi, lo).verdict == "fail"


def test_weighted_ecdf_and_modulus():
    x, c = weighted_ecdf([3.0, 1.0, 2.0], [1.0, 1.0, 2.0])
    assert list(x) == [1.0, 2.0, 3.0]
    assert np.allclose(c, [0.25, 0.75, 1.0])
    grid = np.linspace(0, 1, 11)
    assert modulus_of_continuity(2 * grid, grid, 0.25) == pytest.approx(0.4)
