"""Exact ground truth by brute-force enumeration at small sizes.

All probabilities are :class:`fractions.Fraction`, so oracle comparisons need no
tolerance.  Enumeration caps are explicit errors (:class:`ResourceLimit`).
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Iterator, Sequence

import numpy as np

from .coalescent import (CoalescentTrace, _replay, pair_distance, pairwise_disjoint,
                         selection_record, stats_from_flips)
from .tree_core import distance, increasing_trees

MAX_CHAIN_N = 6
MAX_FLIP_BITS = 20


class ResourceLimit(ValueError):
    """Requested enumeration exceeds the configured cap."""


class EmptyCondition(ValueError):
    """The conditioning event has probability zero."""


@dataclass
class ExactPmf:
    prob: dict[Hashable, Fraction] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: Counter, total: int | None = None) -> "ExactPmf":
        total = sum(counts.values()) if total is None else total
        return cls({o: Fraction(c, total) for o, c in counts.items()})

    @property
    def support(self) -> list:
        return sorted(self.prob, key=repr)

    def total(self) -> Fraction:
        return sum(self.prob.values(), Fraction(0))

    def __getitem__(self, outcome) -> Fraction:
        return self.prob.get(outcome, Fraction(0))

    def __len__(self) -> int:
        return len(self.prob)

    def push(self, fn: Callable) -> "ExactPmf":
        out: dict = {}
        for o, p in self.prob.items():
            key = fn(o)
            out[key] = out.get(key, Fraction(0)) + p
        return ExactPmf(out)

    def is_uniform(self) -> bool:
        vals = set(self.prob.values())
        return len(vals) == 1 and next(iter(vals)) == Fraction(1, len(self.prob))

    def tv_distance(self, other: dict[Hashable, float]) -> float:
        keys = set(self.prob) | set(other)
        return 0.5 * sum(abs(float(self[k]) - float(other.get(k, 0.0))) for k in keys)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["outcome", "probability_num", "probability_den"])
        for o in self.support:
            p = self.prob[o]
            w.writerow([repr(o), p.numerator, p.denominator])
        return buf.getvalue()


# -- chains -----------------------------------------------------------------

def chain_count(n: int) -> int:
    return math.prod(math.comb(j, 2) * 2 for j in range(2, n + 1))


def enumerate_chains(n: int) -> Iterator[tuple[tuple[tuple[int, int], ...], tuple[int, ...]]]:
    """Every (merge list, flip list) of the coalescent on ``n`` vertices, each once."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n > MAX_CHAIN_N:
        raise ResourceLimit(f"chain enumeration is capped at n={MAX_CHAIN_N}, got {n}")
    per_step = [list(itertools.combinations(range(1, j + 1), 2)) for j in range(n, 1, -1)]
    for pairs in itertools.product(*per_step):
        for flips in itertools.product((0, 1), repeat=n - 1):
            yield pairs, flips


def all_traces(n: int) -> Iterator[CoalescentTrace]:
    for pairs, flips in enumerate_chains(n):
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        yield _replay(n, arr[:, 0], arr[:, 1], np.asarray(flips, dtype=np.int64))


def exact_rrt_law(n: int) -> ExactPmf:
    """Law of the relabelled final tree under the uniform chain measure, keyed by parent tuple."""
    counts = Counter(tr.relabelled().key() for tr in all_traces(n))
    return ExactPmf.from_counts(counts, chain_count(n))


def uniform_increasing_law(n: int) -> ExactPmf:
    keys = [t.key() for t in increasing_trees(n)]
    return ExactPmf({k: Fraction(1, len(keys)) for k in keys})


# -- one- and multi-vertex flip identities ----------------------------------

MODES = ("geq", "eq", "nolab")


def _bin_cdf(m: int, x: int) -> Fraction:
    """P(Bin(m, 1/2) <= x), exact."""
    if x < 0:
        return Fraction(0)
    return Fraction(sum(math.comb(m, i) for i in range(0, min(x, m) + 1)), 2**m)


def _check_J(n: int, t_n: int, J: Sequence[int]) -> tuple[int, ...]:
    J = tuple(sorted(set(int(j) for j in J), reverse=True))
    if len(J) > MAX_FLIP_BITS:
        raise ResourceLimit(f"flip enumeration is capped at {MAX_FLIP_BITS} steps, got {len(J)}")
    if not 2 <= t_n <= n:
        raise ValueError(f"truncation step must lie in [2, {n}], got {t_n}")
    if any(j < t_n or j > n for j in J):
        raise ValueError(f"step set must lie in [{t_n}, {n}]")
    return J


def closed_form_one(n: int, t_n: int, J: Sequence[int], d: int, h: int, ell: int,
                    mode: str = "geq") -> Fraction:
    """Binomial closed form for one vertex's truncated event given its truncated selection set."""
    J = _check_J(n, t_n, J)
    if mode == "nolab":
        m = len(J)
        if m < d:
            return Fraction(0)
        return Fraction(1, 2**d) * _bin_cdf(m - d, h)
    if ell < t_n or ell > n:
        raise ValueError(f"label {ell} must lie in [{t_n}, {n}]")
    below = sum(1 for j in J if t_n <= j <= ell - 1)
    if mode == "geq":
        upper = sum(1 for j in J if j >= ell)
        if upper < d + 1:
            return Fraction(0)
        m1 = upper - d
        # P(X1 + X2 <= h, X1 >= 1), X1 ~ Bin(m1), X2 ~ Bin(below)
        num = sum(math.comb(m1, x1) * math.comb(below, x2)
                  for x1 in range(1, m1 + 1) for x2 in range(0, below + 1) if x1 + x2 <= h)
        return Fraction(num, 2 ** (m1 + below + d))
    if mode == "eq":
        above = sum(1 for j in J if j >= ell + 1)
        if above > d or ell not in J:
            return Fraction(0)
        return Fraction(1, 2 ** (above + 1)) * _bin_cdf(below, h - 1)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _flip_table(m: int) -> np.ndarray:
    """All 2^m flip vectors as rows; column c is the flip at the c-th largest step."""
    if m == 0:
        return np.zeros((1, 0), dtype=np.int8)
    idx = np.arange(2**m, dtype=np.int64)[:, None]
    return ((idx >> np.arange(m)) & 1).astype(np.int8)


def _event_mask(flips: np.ndarray, J: tuple[int, ...], d: int, h: int, ell: int, mode: str) -> np.ndarray:
    """Per flip row: does the vertex event hold?  Reads degree/depth/label straight off the flips.

    In label modes ``ell >= t_n`` and the label is the first lost step in ``J``
    (or below ``t_n`` if there is none), so the event is a function of these
    flips alone.  The nolab mode treats ``J`` as the complete selection set.
    """
    m = len(J)
    h1 = flips.sum(axis=1)
    lost = flips.astype(bool)
    first = np.where(lost.any(axis=1), lost.argmax(axis=1), m) if m else np.zeros(len(flips), dtype=np.int64)
    depth_ok = h1 <= h
    if mode == "nolab":
        return depth_ok & (first >= d)
    Jarr = np.asarray(J + (0,), dtype=np.int64)
    label = Jarr[first]  # 0 stands for "below t_n"
    if mode == "geq":
        return depth_ok & (first < m) & (label >= ell) & (first >= d)
    if mode == "eq":
        return depth_ok & (first < m) & (label == ell) & (first <= d)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def enumerate_one(n: int, t_n: int, J: Sequence[int], d: int, h: int, ell: int,
                  mode: str = "geq") -> Fraction:
    J = _check_J(n, t_n, J)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "nolab" and t_n != 2:
        raise ValueError("nolab mode reads J as the full selection set and needs t_n = 2")
    if mode != "nolab" and not t_n <= ell <= n:
        raise ValueError(f"label {ell} must lie in [{t_n}, {n}]")
    flips = _flip_table(len(J))
    hits = int(_event_mask(flips, J, d, h, ell, mode).sum())
    return Fraction(hits, 2 ** len(J))


def verify_probonevert(n: int, t_n: int, J: Sequence[int], d: int, h: int, ell: int,
                       mode: str = "geq") -> tuple[Fraction, Fraction]:
    """(closed form, enumeration) for one vertex; they must coincide."""
    enumerated = enumerate_one(n, t_n, J, d, h, ell, mode)
    return closed_form_one(n, t_n, J, d, h, ell, mode), enumerated


def verify_product_form(n: int, t_n: int, Js: Sequence[Sequence[int]], ds: Sequence[int],
                        hs: Sequence[int], ells: Sequence[int], mode: str = "geq"
                        ) -> tuple[Fraction, Fraction]:
    """(joint by enumerating all flips of the union, product of one-vertex closed forms)."""
    if not len(Js) == len(ds) == len(hs) == len(ells):
        raise ValueError("per-vertex parameter lists must have equal length")
    Js = [_check_J(n, t_n, J) for J in Js]
    if not pairwise_disjoint(Js):
        raise ValueError("step sets must be pairwise disjoint")
    total = sum(len(J) for J in Js)
    if total > MAX_FLIP_BITS:
        raise ResourceLimit(f"flip enumeration is capped at {MAX_FLIP_BITS} steps, got {total}")
    if mode == "nolab" and t_n != 2:
        raise ValueError("nolab mode reads J as the full selection set and needs t_n = 2")
    flips = _flip_table(total)
    ok = np.ones(len(flips), dtype=bool)
    col = 0
    for J, d, h, ell in zip(Js, ds, hs, ells):
        if mode != "nolab" and not t_n <= ell <= n:
            raise ValueError(f"label {ell} must lie in [{t_n}, {n}]")
        ok &= _event_mask(flips[:, col:col + len(J)], J, d, h, ell, mode)
        col += len(J)
    joint = Fraction(int(ok.sum()), 2**total)
    product = math.prod((closed_form_one(n, t_n, J, d, h, ell, mode)
                         for J, d, h, ell in zip(Js, ds, hs, ells)), start=Fraction(1))
    return joint, product


# -- label and degree probabilities -----------------------------------------

def falling_factorial(n: int, k: int) -> int:
    return math.prod(range(n - k + 1, n + 1))


def exact_label_prob(n: int, labels: Sequence[int]) -> tuple[Fraction, Fraction]:
    """(enumerated P(label of vertex i = labels[i-1] for all i), 1/(n)_k)."""
    labels = [int(x) for x in labels]
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be distinct")
    if not 1 <= len(labels) <= n or any(not 1 <= x <= n for x in labels):
        raise ValueError(f"need 1..{n} labels in [1, {n}]")
    target = np.asarray(labels, dtype=np.int64)
    k = len(labels)
    hits = sum(1 for tr in all_traces(n) if np.array_equal(tr.label[1:k + 1], target))
    return Fraction(hits, chain_count(n)), Fraction(1, falling_factorial(n, k))


def degprob_table(n: int, degrees: Sequence[int], t_n: int = 2) -> dict[tuple, Fraction]:
    """P(every tracked vertex has degree >= d_i | truncated selection sets = Jbar), per feasible Jbar.

    Only outcomes with positive joint probability are kept, i.e. the table is indexed by A_n.
    """
    k = len(degrees)
    joint: Counter = Counter()
    marg: Counter = Counter()
    for tr in all_traces(n):
        rec = selection_record(tr, k)
        key = tuple(tuple(s for s in rec.steps[i] if s >= t_n) for i in rec.tracked)
        marg[key] += 1
        if all(stats_from_flips(rec, i).degree >= d for i, d in zip(rec.tracked, degrees)):
            joint[key] += 1
    return {key: Fraction(joint[key], marg[key]) for key in joint}


# -- conditional laws -------------------------------------------------------

def degree_condition(degrees: Sequence[int]) -> Callable[[CoalescentTrace], bool]:
    degrees = list(degrees)

    def cond(tr: CoalescentTrace) -> bool:
        return all(tr.degree(i) >= d for i, d in enumerate(degrees, start=1))
    return cond


def label_condition(labels: Sequence[int]) -> Callable[[CoalescentTrace], bool]:
    labels = list(labels)

    def cond(tr: CoalescentTrace) -> bool:
        return all(int(tr.label[i]) == x for i, x in enumerate(labels, start=1))
    return cond


def tracked_statistics(k: int) -> Callable[[CoalescentTrace], tuple]:
    """Per-vertex (degree, depth, label) for vertices 1..k, then pairwise distances in index order."""
    def stat(tr: CoalescentTrace) -> tuple:
        rrt = tr.relabelled()
        per = tuple((tr.degree(i), tr.depth(i), int(tr.label[i])) for i in range(1, k + 1))
        pairs = tuple(distance(rrt, int(tr.label[i]), int(tr.label[j]))
                      for i, j in itertools.combinations(range(1, k + 1), 2))
        return per + pairs
    return stat


def record_statistics(rec, k: int) -> tuple:
    """Same tuple as :func:`tracked_statistics`, read from a selection record."""
    per = tuple((s.degree, s.depth, s.label) for s in (stats_from_flips(rec, i) for i in range(1, k + 1)))
    pairs = tuple(pair_distance(rec, i, j) for i, j in itertools.combinations(range(1, k + 1), 2))
    return per + pairs


def exact_conditional_law(n: int, condition: Callable[[CoalescentTrace], bool],
                          statistic: Callable[[CoalescentTrace], Hashable]) -> ExactPmf:
    if n > 5:
        raise ResourceLimit(f"conditional laws are enumerated for n <= 5, got {n}")
    counts: Counter = Counter()
    for tr in all_traces(n):
        if condition(tr):
            counts[statistic(tr)] += 1
    if not counts:
        raise EmptyCondition("conditioning event has probability zero")
    return ExactPmf.from_counts(counts)
