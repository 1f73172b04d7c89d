import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rrtcoal.limitlaws import (MARK_RHO, MU, SIGMA2, NormalizedTuple, Rect, RegimeSpec, c_coef,
                               denormalize_cond_degree, eps_n, factorial_moment, ks_critical,
                               ks_discrete, ks_distance, ks_two_sample, limit_tuple_cond_degree,
                               log2_floor, mark_rect_prob, mark_sample, norm_cdf,
                               normalize_cond_degree, normalize_fixed_label, poisson_binomial_pmf,
                               poisson_cdf, ppp_sample, pr_value)


def test_constants():
    assert MU == pytest.approx(0.27865, abs=1e-5)
    assert SIGMA2 == pytest.approx(0.63933, abs=1e-5)
    assert 0 < MU < SIGMA2 < 1
    assert MARK_RHO == pytest.approx(math.sqrt(1 - MU / SIGMA2))


def test_eps_and_log2():
    assert eps_n(2**20) == 0.0
    assert eps_n(3 * 2**10) == pytest.approx(math.log2(1.5))
    assert log2_floor(1000) == 9 and log2_floor(1024) == 10
    with pytest.raises(ValueError):
        eps_n(0)


def test_mark_moments():
    x, y = mark_sample(np.random.default_rng(0), 200_000)
    assert abs(x.var() - 1) < 0.02 and abs(y.var() - 1) < 0.02
    assert abs(np.corrcoef(x, y)[0, 1] - MARK_RHO) < 0.01
    pt = mark_sample(np.random.default_rng(0))
    assert isinstance(pt, tuple) and len(pt) == 2


def test_mark_rect_probability_matches_sampling():
    r = Rect(-0.5, 1.0, -1.0, 0.3)
    x, y = mark_sample(np.random.default_rng(1), 400_000)
    p = mark_rect_prob(r)
    assert abs(r.contains(x, y).mean() - p) <= 4 * math.sqrt(p * (1 - p) / x.size)
    assert mark_rect_prob(Rect(-50, 50, -50, 50)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        Rect(1, 1, 0, 1)
    assert Rect(0, 1, 0, 1).overlaps(Rect(0.5, 2, 0.5, 2))
    assert not Rect(0, 1, 0, 1).overlaps(Rect(1, 2, 0, 1))


def test_ppp_counts_and_range():
    rng = np.random.default_rng(2)
    counts = [ppp_sample(0.0, math.inf, rng).size for _ in range(20_000)]
    assert abs(np.mean(counts) - 1.0) < 0.03
    pts = ppp_sample(-3.0, 2.0, rng)
    assert pts.size == 0 or (pts.min() >= -3.0 and pts.max() < 2.0)
    with pytest.raises(ValueError):
        ppp_sample(1.0, 1.0, rng)


def test_regime_values():
    assert pr_value(0.0, RegimeSpec("sublinear"), 0) == pytest.approx(0.5)
    assert pr_value(0.0, RegimeSpec("proportional", 0.5), 0) == pytest.approx(0.5)
    assert pr_value(0.0, RegimeSpec("proportional", 0.5), 1) == pytest.approx(0.5 * (1 + math.log(2)))
    assert pr_value(-3.0, RegimeSpec("full"), 0) == 1.0
    with pytest.raises(ValueError):
        RegimeSpec("proportional", 1.5)


def test_cond_normalization_examples():
    n = 2**16
    ln = math.log(n)
    nt = normalize_cond_degree([(0, round(ln), 5)], n, [0])
    assert nt.per_vertex[0][1] == pytest.approx((round(ln) - ln) / math.sqrt(ln))
    assert math.isnan(nt.per_vertex[0][2])
    nt = normalize_cond_degree([(11, 6, 1000), (4, 8, 20000)], n, [11, 4], [12])
    back = denormalize_cond_degree(nt, n, [11, 4])
    assert back.per_vertex[0][:2] == pytest.approx((11, 6))
    assert back.per_vertex[0][2] == pytest.approx(1000)
    assert back.per_pair[0] == pytest.approx(12)
    with pytest.raises(ValueError):
        normalize_cond_degree([(0, 0, 1)], n, [23])


def test_fixed_label_normalization_examples():
    n = 10**6
    nt = normalize_fixed_label([(7, 7, 1000)], n, [1000])
    assert nt.per_vertex[0][0] == pytest.approx((7 - math.log(1000)) / math.sqrt(math.log(1000)))
    nt = normalize_fixed_label([(0, 3, n)], n, [n])
    assert nt.per_vertex[0][0] == 0.0
    assert c_coef(1000, 1000) == pytest.approx(math.sqrt(0.5))
    with pytest.raises(ValueError):
        normalize_fixed_label([(0, 0, 1)], n, [1])


def test_limit_tuple_shapes_and_correlation():
    rng = np.random.default_rng(3)
    out = limit_tuple_cond_degree([1.0, 0.5], 2, rng, 100_000)
    assert out["depth"].shape == (100_000, 2) and out["dist"].shape == (100_000, 1)
    r = np.corrcoef(out["depth"][:, 0], out["label"][:, 0])[0, 1]
    assert abs(r - math.sqrt(1 / 3)) < 0.01
    assert abs(out["dist"].std() - 1) < 0.01
    bounded = limit_tuple_cond_degree(None, 3, rng, 10)
    assert np.isnan(bounded["label"]).all() and bounded["dist"].shape == (10, 3)
    with pytest.raises(ValueError):
        limit_tuple_cond_degree([2.0], 1, rng)


def test_ks_examples():
    x = np.random.default_rng(4).standard_normal(500)
    assert ks_distance(x, norm_cdf) == pytest.approx(stats.kstest(x, "norm").statistic)
    assert ks_distance([0.5], lambda t: np.asarray(t)) == pytest.approx(0.5)
    assert ks_two_sample([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_two_sample([0, 0], [1, 1]) == 1.0
    assert ks_discrete([0, 0, 1, 1], lambda v: 0.5 if 0 <= v < 1 else float(v >= 1)) == 0.0
    assert ks_critical(10_000) == pytest.approx(1.9495 / 100, rel=1e-3)
    with pytest.raises(ValueError):
        ks_distance([], norm_cdf)


def test_poisson_helpers():
    assert poisson_cdf(2, 1.5) == pytest.approx(stats.poisson.cdf(2, 1.5))
    assert poisson_cdf(-1, 1.0) == 0.0
    probs = np.array([0.1, 0.5, 0.9, 0.3])
    direct = np.array([1.0])
    for p in probs:
        direct = np.convolve(direct, [1 - p, p])
    assert np.allclose(poisson_binomial_pmf(probs, 4), direct, atol=1e-12)


def test_factorial_moment_examples():
    counts = np.array([[0, 2], [1, 3], [2, 0]])
    assert factorial_moment(counts, [0, 0])[0] == 1.0
    assert factorial_moment(counts, [1, 0])[0] == pytest.approx(1.0)
    assert factorial_moment(counts, [2, 1])[0] == pytest.approx(0.0)
    assert factorial_moment(counts, [1, 2])[0] == pytest.approx(6 / 3)
    with pytest.raises(ValueError):
        factorial_moment(counts, [1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50))
def test_ks_bounded(xs):
    assert 0.0 <= ks_distance(xs, norm_cdf) <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10), st.integers(0, 30), st.integers(2, 10**5), st.integers(0, 40))
def test_cond_normalization_round_trip(d, h, lab, dist):
    n = 2**16
    nt = normalize_cond_degree([(d + 1, h, lab), (d, h + 1, lab)], n, [d, d], [dist])
    back = denormalize_cond_degree(nt, n, [d, d])
    assert back.per_vertex[0][1] == pytest.approx(h)
    assert back.per_pair[0] == pytest.approx(dist)
    assert isinstance(nt, NormalizedTuple)
