"""Acceptance suite: one test per criterion, tolerances fixed here.

Seeds are fixed up front.  A summary line per criterion is printed at the end
of the pytest run (see conftest.py).
"""
import itertools
import math
import random
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from rrtcoal.cli import random_disjoint_instance
from rrtcoal.coalescent import (check_record_invariants, check_trace_invariants, run_coalescent,
                                sample_conditional_batch, selection_record)
from rrtcoal.exact_oracle import (MODES, degree_condition, exact_conditional_law, exact_label_prob,
                                  exact_rrt_law, record_statistics, tracked_statistics,
                                  verify_probonevert, verify_product_form)
from rrtcoal.experiments import ExperimentConfig, run_experiment
from rrtcoal.tree_core import build_rrt, check_tree_invariants

N16 = 2**16
LN16 = math.log(N16)
D11 = math.floor(LN16)  # floor(ln 2^16) = 11


@pytest.fixture(scope="module")
def cond_runs():
    out = {}
    for d in (0, D11):
        cfg = ExperimentConfig("cond-degree", N16, 10_000, seed=7, degrees=[f"abs:{d}"])
        t0 = time.perf_counter()
        out[d] = run_experiment(cfg)
        out[d].counts["elapsed"] = time.perf_counter() - t0
    return out


@pytest.mark.criterion(1, "coupling: exact law of the relabelled coalescent tree is uniform at n=3,4,5")
def test_criterion_01_coupling_uniform():
    t0 = time.perf_counter()
    expected = {3: Fraction(1, 2), 4: Fraction(1, 6), 5: Fraction(1, 24)}
    for n, w in expected.items():
        law = exact_rrt_law(n)
        assert len(law) == math.factorial(n - 1)
        assert set(law.prob.values()) == {w}
        assert law.total() == 1
    assert time.perf_counter() - t0 < 10


@pytest.mark.criterion(2, "one-vertex closed forms equal flip enumeration on 1000 random instances")
def test_criterion_02_one_vertex_identities():
    t0 = time.perf_counter()
    rnd = random.Random(2)
    mismatches = 0
    for _ in range(1000):
        n = rnd.randint(3, 60)
        mode = rnd.choice(MODES)
        t_n = 2 if mode == "nolab" else rnd.randint(2, n)
        J = rnd.sample(range(t_n, n + 1), rnd.randint(0, min(12, n - t_n + 1)))
        ell = rnd.randint(t_n, n)
        cf, en = verify_probonevert(n, t_n, J, rnd.randint(0, 6), rnd.randint(0, 10), ell, mode)
        mismatches += cf != en
    assert mismatches == 0
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion(3, "multi-vertex product form on 500 random disjoint instances")
def test_criterion_03_product_form():
    t0 = time.perf_counter()
    rnd = random.Random(3)
    mismatches = 0
    for _ in range(500):
        n, t_n, Js, ds, hs, ells = random_disjoint_instance(rnd)
        joint, prod = verify_product_form(n, t_n, Js, ds, hs, ells, rnd.choice(("geq", "eq")))
        mismatches += joint != prod
    assert mismatches == 0
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion(4, "label probability 1/(n)_k exact for n<=5, k in {1,2,3}")
def test_criterion_04_label_probability():
    for n in (3, 4, 5):
        for k in (1, 2, 3):
            for labels in itertools.permutations(range(1, n + 1), k):
                enumerated, closed = exact_label_prob(n, labels)
                assert enumerated == closed == Fraction(1, math.perm(n, k))


@pytest.mark.criterion(5, "degree tail: 2^8 P(d >= 8) in [0.85, 1.15] at n=2^10")
def test_criterion_05_degree_tail():
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig("degree-tail", 2**10, 100_000, seed=5, degrees=["abs:8"]))
    est = rep.row("scaled_tail").estimate
    assert 0.85 <= est <= 1.15, est
    assert time.perf_counter() - t0 < 120


def _cond_law_draws(n, degrees, draws, seed):
    rng = np.random.default_rng(seed)
    padded = list(degrees) + [0] * (n - len(degrees))
    counts = Counter()
    done = 0
    while done < draws:
        batch = min(50_000, draws - done)
        for d in sample_conditional_batch(n, padded, rng, batch, full=False):
            counts[record_statistics(d.record, n)] += 1
        done += batch
    return {key: c / draws for key, c in counts.items()}


@pytest.mark.criterion(6, "conditional sampler: TV to exact conditional law <= 0.01 at n=3,4 (10^6 draws)")
def test_criterion_06_conditional_sampler_exact():
    for n, degrees in ((3, (1,)), (4, (1, 1))):
        exact = exact_conditional_law(n, degree_condition(degrees), tracked_statistics(n))
        emp = _cond_law_draws(n, degrees, 1_000_000, seed=6 + n)
        tv = exact.tv_distance(emp)
        assert tv <= 0.01, (n, degrees, tv)


@pytest.mark.criterion(7, "depth CLT given degree >= d at n=2^16, d in {0, floor(ln n)}: KS <= 0.05")
def test_criterion_07_depth_clt(cond_runs):
    assert sum(r.counts["elapsed"] for r in cond_runs.values()) < 600
    ks = {d: cond_runs[d].row("depth_v1").ks for d in cond_runs}
    assert all(v <= 0.05 for v in ks.values()), ks


@pytest.mark.criterion(8, "joint depth/label given degree >= floor(ln n): KS <= 0.07 each, corr within 0.05")
def test_criterion_08_depth_label_joint(cond_runs):
    rep = cond_runs[D11]
    a = D11 / LN16
    target = math.sqrt(a / (4 - a))
    depth_ks = rep.row("depth_v1").ks
    label_ks = rep.row("label_v1").ks
    corr = rep.row("depth_label_corr_v1").estimate
    assert depth_ks <= 0.07 and label_ks <= 0.07 and abs(corr - target) <= 0.05, (depth_ks, label_ks, corr, target)


@pytest.fixture(scope="module")
def fixed_label_run():
    cfg = ExperimentConfig("fixed-label", 10**6, 10_000, seed=9,
                           labels=["pow:0.5", "rho:0.5", "last", "abs:2000"], pairs=[[0, 3]])
    t0 = time.perf_counter()
    rep = run_experiment(cfg)
    rep.counts["elapsed"] = time.perf_counter() - t0
    return rep


@pytest.mark.criterion(9, "fixed labels at n=10^6: sqrt(n) depth/degree KS, n/2 Poisson pmf, last label, pair distance")
def test_criterion_09_fixed_label(fixed_label_run):
    rep = fixed_label_run
    assert rep.counts["elapsed"] < 1800
    failures = []
    if not rep.row("depth_l1000").ks <= 0.05:
        failures.append(("depth_l1000", rep.row("depth_l1000").ks))
    if not rep.row("degree_l1000").ks <= 0.1:
        failures.append(("degree_l1000", rep.row("degree_l1000").ks))
    for v, ref in ((0, 0.5), (1, 0.3466), (2, 0.1201)):
        est = rep.row(f"degree_l500000_pmf{v}").estimate
        if not abs(est - ref) <= 0.02:
            failures.append((f"pmf{v}", est))
    if rep.row("degree_l1000000_zero").estimate != 0:
        failures.append(("last label degree", rep.row("degree_l1000000_zero").estimate))
    if not rep.row("dist_l1000_l2000").ks <= 0.07:
        failures.append(("dist", rep.row("dist_l1000_l2000").ks))
    assert not failures, failures


@pytest.mark.criterion(10, "factorial moments at n=2^16: E X_{>=0} in [0.85,1.15], E X_{>=1} in [0.42,0.58]")
def test_criterion_10_factorial_moments():
    t0 = time.perf_counter()
    m0 = run_experiment(ExperimentConfig("moments", N16, 2000, seed=10, j=[0], orders=[1])).row("factorial_moment")
    m1 = run_experiment(ExperimentConfig("moments", N16, 2000, seed=10, j=[1], orders=[1])).row("factorial_moment")
    assert time.perf_counter() - t0 < 600
    assert 0.85 <= m0.estimate <= 1.15 and 0.42 <= m1.estimate <= 0.58, (m0.estimate, m1.estimate)


@pytest.mark.criterion(11, "tau_2, tau_3 survival under k^2/(K-2) for K in [7,100] at n=10^3, 3 standard errors")
def test_criterion_11_tau_envelope():
    rep = run_experiment(ExperimentConfig("tau", 1000, 100_000, seed=11, k_values=[2, 3], K_range=[7, 100]))
    assert rep.row("tau2_envelope").passed and rep.row("tau3_envelope").passed


@pytest.mark.criterion(12, "structural invariants hold in every replicate")
def test_criterion_12_structural_invariants():
    rng = np.random.default_rng(12)
    checks = 0
    for _ in range(1000):
        tr = run_coalescent(64, rng)
        rec = selection_record(tr)
        checks += check_trace_invariants(tr, rec) + check_record_invariants(rec)
        t = build_rrt(500, rng)
        pairs = [tuple(int(v) for v in rng.integers(1, 501, 2)) for _ in range(10)]
        checks += check_tree_invariants(t, pairs)
    small = [
        ExperimentConfig("near-max", 2**10, 50, seed=12, j=[0, 1]),
        ExperimentConfig("moments", 2**10, 50, seed=12, j=[0]),
        ExperimentConfig("cond-degree", 2**10, 50, seed=12, degrees=["abs:3", "abs:2"], mode="full"),
        ExperimentConfig("cond-degree", 2**12, 50, seed=12, degrees=["abs:3"], mode="tracked"),
        ExperimentConfig("fixed-label", 10**4, 50, seed=12, labels=["pow:0.5", "rho:0.5", "last"]),
        ExperimentConfig("tau", 1000, 200, seed=12, degrees=["abs:2", "abs:2"]),
        ExperimentConfig("h2", 2**10, 50, seed=12, labels=["pow:0.5"]),
        ExperimentConfig("degree-tail", 2**10, 200, seed=12, degrees=["abs:3"]),
    ]
    for cfg in small:
        rep = run_experiment(cfg)
        assert rep.invariant_checks >= cfg.replicates, cfg.experiment
        checks += rep.invariant_checks
    assert checks > 0
