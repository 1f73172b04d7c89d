"""Kingman n-coalescent construction of the random recursive tree.

The coalescent starts from ``n`` singleton trees and, at steps ``j = n, ..., 2``,
picks a uniform pair of positions ``a < b`` among the ``j`` current trees
(ordered by smallest vertex) and joins their roots.  A fair bit ``xi`` decides
the direction: ``xi = 1`` points the new edge at the root of tree ``a``.  The
root that loses the flip at step ``j`` receives RRT label ``j``; the final
root receives label 1.

Vertex ``i`` is *selected* at step ``j`` when its tree is one of the two joined
trees, and its flip ``h[i, j]`` is 1 when its tree is the one that gets
attached below the other (its depth grows by one).  Degree, depth and label of
``i`` are read off the selection steps and flips alone; see
:func:`stats_from_flips`.

Two simulation modes share the same randomness layout:

* :func:`run_coalescent` replays every merge and returns the full final tree.
* :func:`track_coalescent` follows only the trees holding vertices ``1..k``.
  Those trees always occupy positions ``1..m`` of the ordering (they are
  exactly the trees whose smallest vertex is ``<= k``), so the restricted
  process is exact for the tracked vertices and costs O(n) vectorized work
  plus a Python loop over the O(k log n) steps that touch them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .tree_core import InvariantViolation, TreeTopology, VertexStats, distance

RETRY_BUDGET = 10**6


class UnsatisfiableCondition(RuntimeError):
    """The degree condition could not be met within the retry budget."""


@dataclass(frozen=True, eq=False)
class CoalescentTrace:
    """One complete coalescent run.

    ``merges[t] = (a, b, xi)`` belongs to step ``j = n - t``.  ``parent`` is
    the final tree over the original vertex identities (0 marks the root) and
    ``label[v]`` is the RRT label of original vertex ``v``.
    """

    n: int
    merges: tuple[tuple[int, int, int], ...]
    parent: np.ndarray
    label: np.ndarray

    def steps(self) -> range:
        return range(self.n, 1, -1)

    def relabelled(self) -> TreeTopology:
        par = np.zeros(self.n + 1, dtype=np.int64)
        for v in range(1, self.n + 1):
            p = int(self.parent[v])
            if p:
                par[self.label[v]] = self.label[p]
        return TreeTopology(self.n, par)

    def degree(self, v: int) -> int:
        return int(np.count_nonzero(self.parent[1:] == v))

    def depth(self, v: int) -> int:
        h = 0
        while self.parent[v]:
            v = int(self.parent[v])
            h += 1
        return h

    def vertex_stats(self, v: int) -> VertexStats:
        return VertexStats(self.degree(v), self.depth(v), int(self.label[v]))

    def to_jsonl(self) -> str:
        rows = [json.dumps({"step": j, "a": a, "b": b, "xi": xi})
                for j, (a, b, xi) in zip(self.steps(), self.merges)]
        return "\n".join(rows) + ("\n" if rows else "")


@dataclass(frozen=True)
class SelectionRecord:
    """Selection steps ``S_n(i)`` (decreasing) and the flips on them, per tracked vertex."""

    n: int
    tracked: tuple[int, ...]
    steps: dict[int, tuple[int, ...]]
    flips: dict[int, tuple[int, ...]]
    complete: bool = True

    @property
    def k(self) -> int:
        return len(self.tracked)

    def flip_at(self, i: int, j: int) -> int:
        return self.flips[i][self.steps[i].index(j)]


@dataclass(frozen=True)
class TruncatedView:
    n: int
    t_n: int
    S1: dict[int, tuple[int, ...]]
    h1: dict[int, int]
    h2: dict[int, int]


@dataclass(frozen=True)
class ConditionedDraw:
    record: SelectionRecord
    trace: CoalescentTrace | None = None
    attempts: int = 1


# -- randomness -------------------------------------------------------------

def draw_pairs(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform pairs ``a < b`` from ``[j]`` for ``j = n, ..., 2`` (1-based)."""
    j = np.arange(n, 1, -1)
    if j.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    x = rng.integers(0, j)
    y = rng.integers(0, j - 1)
    y += y >= x
    return np.minimum(x, y) + 1, np.maximum(x, y) + 1


def _check_n(n: int) -> None:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")


def _check_pairs(n: int, a: np.ndarray, b: np.ndarray) -> None:
    j = np.arange(n, 1, -1)
    if a.shape != (n - 1,) or b.shape != (n - 1,):
        raise ValueError(f"need {n - 1} merges for n={n}")
    if np.any(a < 1) or np.any(a >= b) or np.any(b > j):
        raise ValueError("merge pairs must satisfy 1 <= a_j < b_j <= j")


# -- full simulation --------------------------------------------------------

def run_coalescent(n: int, rng: np.random.Generator | None = None, *,
                   merges: Sequence[tuple[int, int]] | None = None,
                   flips: Sequence[int] | None = None) -> CoalescentTrace:
    """Run the coalescent; ``merges``/``flips`` (ordered ``j = n..2``) inject the randomness."""
    _check_n(n)
    if merges is None:
        if rng is None:
            raise ValueError("either rng or merges must be given")
        a, b = draw_pairs(n, rng)
    else:
        arr = np.asarray(merges, dtype=np.int64).reshape(-1, 2)
        a, b = arr[:, 0], arr[:, 1]
    _check_pairs(n, a, b)
    if flips is None:
        if rng is None:
            raise ValueError("either rng or flips must be given")
        xi = rng.integers(0, 2, size=n - 1)
    else:
        xi = np.asarray(flips, dtype=np.int64)
        if xi.shape != (n - 1,) or np.any((xi != 0) & (xi != 1)):
            raise ValueError(f"need {n - 1} flips in {{0, 1}}")
    return _replay(n, a, b, xi)


def _replay(n: int, a: np.ndarray, b: np.ndarray, xi: np.ndarray) -> CoalescentTrace:
    roots = list(range(1, n + 1))
    parent = np.zeros(n + 1, dtype=np.int64)
    label = np.zeros(n + 1, dtype=np.int64)
    for t, j in enumerate(range(n, 1, -1)):
        ai, bi, x = int(a[t]), int(b[t]), int(xi[t])
        ra, rb = roots[ai - 1], roots[bi - 1]
        winner, loser = (ra, rb) if x == 1 else (rb, ra)
        parent[loser] = winner
        label[loser] = j
        roots[ai - 1] = winner
        del roots[bi - 1]
    label[roots[0]] = 1
    merges = tuple((int(p), int(q), int(x)) for p, q, x in zip(a, b, xi))
    parent.setflags(write=False)
    label.setflags(write=False)
    return CoalescentTrace(n, merges, parent, label)


# -- tracked replay ---------------------------------------------------------

@dataclass
class _Event:
    step: int
    group_a: tuple[int, ...]
    group_b: tuple[int, ...] = ()


def _tracked_events(n: int, a: np.ndarray, b: np.ndarray, k: int) -> list[_Event]:
    """Steps at which a tree containing one of ``1..k`` is joined, in decreasing order."""
    groups: list[tuple[int, ...]] = [(i,) for i in range(1, k + 1)]
    events = []
    for t in np.flatnonzero(a <= k):
        m = len(groups)
        ai, bi = int(a[t]), int(b[t])
        if ai > m:
            continue
        ga = groups[ai - 1]
        if bi <= m:
            gb = groups[bi - 1]
            groups[ai - 1] = ga + gb
            del groups[bi - 1]
        else:
            gb = ()
        events.append(_Event(n - int(t), ga, gb))
    return events


def _record_from_events(n: int, k: int, events: list[_Event], xi: Sequence[int]) -> SelectionRecord:
    steps: dict[int, list[int]] = {i: [] for i in range(1, k + 1)}
    flips: dict[int, list[int]] = {i: [] for i in range(1, k + 1)}
    for ev, x in zip(events, xi):
        for v in ev.group_a:
            steps[v].append(ev.step)
            flips[v].append(1 - int(x))
        for v in ev.group_b:
            steps[v].append(ev.step)
            flips[v].append(int(x))
    return SelectionRecord(n, tuple(range(1, k + 1)),
                           {i: tuple(s) for i, s in steps.items()},
                           {i: tuple(f) for i, f in flips.items()})


def selection_record(trace: CoalescentTrace, k: int | None = None) -> SelectionRecord:
    """Selection sets and flips of vertices ``1..k`` (default all) read off a trace."""
    k = trace.n if k is None else k
    if not 1 <= k <= trace.n:
        raise ValueError(f"k must lie in [1, {trace.n}], got {k}")
    arr = np.asarray(trace.merges, dtype=np.int64).reshape(-1, 3)
    events = _tracked_events(trace.n, arr[:, 0], arr[:, 1], k)
    xi = [trace.merges[trace.n - ev.step][2] for ev in events]
    return _record_from_events(trace.n, k, events, xi)


def track_coalescent(n: int, k: int, rng: np.random.Generator) -> SelectionRecord:
    """Unconditioned selection record of vertices ``1..k`` without building the tree."""
    _check_n(n)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    return sample_conditional_batch(n, [0] * k, rng, 1, full=False)[0].record


# -- reading statistics off flips -------------------------------------------

def _require(rec: SelectionRecord, i: int) -> None:
    if not rec.complete or i not in rec.steps or i not in rec.flips:
        raise RuntimeError(f"record does not hold complete selection data for vertex {i}")
    if len(rec.steps[i]) != len(rec.flips[i]):
        raise RuntimeError(f"record for vertex {i} has mismatched steps and flips")


def stats_from_flips(rec: SelectionRecord, i: int) -> VertexStats:
    """Degree = leading run of won flips, depth = lost flips, label = first lost step (else 1)."""
    _require(rec, i)
    fl = rec.flips[i]
    degree = 0
    while degree < len(fl) and fl[degree] == 0:
        degree += 1
    label = rec.steps[i][degree] if degree < len(fl) else 1
    return VertexStats(degree, int(sum(fl)), int(label))


def merge_step(rec: SelectionRecord, i: int, i2: int) -> int:
    """Largest step at which both ``i`` and ``i2`` are selected (the step joining their trees)."""
    _require(rec, i)
    _require(rec, i2)
    common = set(rec.steps[i]).intersection(rec.steps[i2])
    return max(common) if common else 0


def pair_distance(rec: SelectionRecord, i: int, i2: int) -> int:
    """Graph distance in the final tree: flips lost by either vertex up to their merge."""
    j0 = merge_step(rec, i, i2)
    if j0 == 0:
        raise RuntimeError("vertices never joined; record is incomplete")
    lost = sum(f for s, f in zip(rec.steps[i], rec.flips[i]) if s >= j0)
    lost += sum(f for s, f in zip(rec.steps[i2], rec.flips[i2]) if s >= j0)
    return lost


def lca_depth(rec: SelectionRecord, i: int, i2: int) -> int:
    j0 = merge_step(rec, i, i2)
    return sum(f for s, f in zip(rec.steps[i], rec.flips[i]) if s < j0)


def tau(rec: SelectionRecord) -> int:
    """Largest step at which two distinct tracked vertices are both selected; 0 if never."""
    if rec.k < 2:
        raise ValueError("tau needs at least two tracked vertices")
    best = 0
    sets = {i: set(rec.steps[i]) for i in rec.tracked}
    for i, i2 in combinations(rec.tracked, 2):
        common = sets[i] & sets[i2]
        if common:
            best = max(best, max(common))
    return best


def tau_from_pairs(a: np.ndarray, b: np.ndarray, n: int, k: int) -> int:
    """Same as :func:`tau` straight from merge positions: first step with ``{a, b}`` inside ``[k]``."""
    hit = np.flatnonzero(b <= k)
    return int(n - hit[0]) if hit.size else 0


def truncate(rec: SelectionRecord, t_n: int) -> TruncatedView:
    if not 2 <= t_n <= rec.n:
        raise ValueError(f"truncation step must lie in [2, {rec.n}], got {t_n}")
    S1, h1, h2 = {}, {}, {}
    for i in rec.tracked:
        _require(rec, i)
        keep = [(s, f) for s, f in zip(rec.steps[i], rec.flips[i]) if s >= t_n]
        S1[i] = tuple(s for s, _ in keep)
        h1[i] = sum(f for _, f in keep)
        h2[i] = sum(rec.flips[i]) - h1[i]
    return TruncatedView(rec.n, t_n, S1, h1, h2)


def pairwise_disjoint(sets: Iterable[Iterable[int]]) -> bool:
    seen: set[int] = set()
    for s in sets:
        s = set(s)
        if seen & s:
            return False
        seen |= s
    return True


def in_B(sets: Sequence[Iterable[int]], n: int, delta: float) -> bool:
    """Disjoint truncated sets, each of size within ``delta * ln n`` of ``2 ln n``."""
    if not 0 < delta < 2:
        raise ValueError(f"delta must lie in (0, 2), got {delta}")
    sets = [tuple(s) for s in sets]
    ln = math.log(n)
    return pairwise_disjoint(sets) and all(abs(len(s) - 2 * ln) <= delta * ln for s in sets)


def predicate_B(view: TruncatedView, delta: float) -> bool:
    return in_B([view.S1[i] for i in sorted(view.S1)], view.n, delta)


def predicate_wtB(view: TruncatedView) -> bool:
    return pairwise_disjoint(view.S1[i] for i in sorted(view.S1))


# -- conditioning on degrees ------------------------------------------------

def _forced_flips(events: list[_Event], degrees: Sequence[int]) -> dict[int, int] | None:
    """Flip values (by event index) that make every tracked vertex win its first ``d_i`` selections.

    Returns None when the selections cannot support the degree event: too few
    selections, or two prefixes meeting at the step that joins their trees.
    """
    forced: dict[int, int] = {}
    for i, d in enumerate(degrees, start=1):
        if d <= 0:
            continue
        mine = [(e, 1 if i in ev.group_a else 0) for e, ev in enumerate(events)
                if i in ev.group_a or i in ev.group_b]
        if len(mine) < d:
            return None
        for e, want in mine[:d]:
            if forced.setdefault(e, want) != want:
                return None
    return forced


def _draw_pairs_batch(n: int, rows: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(n, 1, -1)
    x = rng.integers(0, j, size=(rows, n - 1))
    y = rng.integers(0, j - 1, size=(rows, n - 1))
    y += y >= x
    return np.minimum(x, y) + 1, np.maximum(x, y) + 1


def sample_conditional_batch(n: int, degrees: Sequence[int], rng: np.random.Generator, size: int, *,
                             full: bool = True, budget: int = RETRY_BUDGET) -> list[ConditionedDraw]:
    """Draw ``size`` independent coalescents conditioned on ``d_n(i) >= degrees[i-1]``, ``i = 1..k``.

    Selections do not depend on flips, and given the selections the event is
    exactly "every tracked vertex wins its first ``d_i`` flips".  When those
    prefixes are pairwise distinct the event has probability ``2^-sum(d)``
    for every admissible selection, so accepting admissible selections
    uniformly and then forcing the prefix flips (others fair) samples the
    conditional law exactly.  Inadmissible selections are redrawn; more than
    ``budget`` consecutive rejections raise :class:`UnsatisfiableCondition`.

    ``full=False`` skips building the tree.  Both modes consume the same
    random numbers, so they return identical records for the same stream.
    """
    _check_n(n)
    degrees = [int(d) for d in degrees]
    k = len(degrees)
    if not 1 <= k <= n:
        raise ValueError(f"need between 1 and n={n} degree thresholds, got {k}")
    if any(d < 0 for d in degrees):
        raise ValueError("degree thresholds must be non-negative")
    if any(d >= n for d in degrees):
        raise UnsatisfiableCondition(f"degree >= n={n} is impossible")
    out: list[ConditionedDraw] = []
    fails = 0
    max_rows = max(1, 4_000_000 // max(n - 1, 1))
    while len(out) < size:
        rows = min(size - len(out), max_rows)
        A, B = _draw_pairs_batch(n, rows, rng)
        XI = rng.integers(0, 2, size=(rows, n - 1))
        for r in range(rows):
            events = _tracked_events(n, A[r], B[r], k)
            forced = _forced_flips(events, degrees)
            fails += 1
            if forced is None:
                if fails >= budget:
                    raise UnsatisfiableCondition(
                        f"no admissible selection for degrees {degrees} at n={n} after {budget} attempts")
                continue
            xi = XI[r]
            for e, want in forced.items():
                xi[n - events[e].step] = want
            ev_xi = [int(xi[n - ev.step]) for ev in events]
            rec = _record_from_events(n, k, events, ev_xi)
            trace = _replay(n, A[r], B[r], xi) if full else None
            out.append(ConditionedDraw(rec, trace, fails))
            fails = 0
            if len(out) == size:
                break
    return out


def sample_conditional_degrees(n: int, degrees: Sequence[int], rng: np.random.Generator, *,
                               full: bool = True, budget: int = RETRY_BUDGET) -> ConditionedDraw:
    """One draw of :func:`sample_conditional_batch`."""
    return sample_conditional_batch(n, degrees, rng, 1, full=full, budget=budget)[0]


# -- invariants -------------------------------------------------------------

def check_trace_invariants(trace: CoalescentTrace, rec: SelectionRecord | None = None) -> int:
    """Assert the relabelling and flip-reading identities for one trace; returns check count."""
    n = trace.n
    labels = trace.label[1:]
    if sorted(labels.tolist()) != list(range(1, n + 1)):
        raise InvariantViolation("label map is not a bijection onto [n]")
    for v in range(1, n + 1):
        p = int(trace.parent[v])
        if p and trace.label[p] >= trace.label[v]:
            raise InvariantViolation(f"relabelled edge {v}->{p} is not increasing")
    root = [v for v in range(1, n + 1) if trace.parent[v] == 0]
    if len(root) != 1 or trace.label[root[0]] != 1:
        raise InvariantViolation("final tree must have a single root labelled 1")
    checks = 3
    if rec is None:
        return checks
    rrt = trace.relabelled()
    for i in rec.tracked:
        got = stats_from_flips(rec, i)
        direct = trace.vertex_stats(i)
        if got != direct:
            raise InvariantViolation(f"flip reading {got} differs from tree {direct} for vertex {i}")
        lab = direct.label
        if (int(rrt.in_degrees[lab]), int(rrt.depths[lab])) != (direct.degree, direct.depth):
            raise InvariantViolation(f"relabelled tree disagrees at vertex {i}")
        checks += 1
    for i, i2 in combinations(rec.tracked, 2):
        d = pair_distance(rec, i, i2)
        if d != distance(rrt, int(trace.label[i]), int(trace.label[i2])):
            raise InvariantViolation(f"pair distance mismatch for ({i}, {i2})")
        checks += 1
    return checks


def check_record_invariants(rec: SelectionRecord) -> int:
    """Identities that hold on a tracked record alone (no tree available)."""
    checks = 0
    stats = {i: stats_from_flips(rec, i) for i in rec.tracked}
    for i, st in stats.items():
        if any(s < 2 or s > rec.n for s in rec.steps[i]) or list(rec.steps[i]) != sorted(rec.steps[i], reverse=True):
            raise InvariantViolation(f"selection steps of {i} out of order or range")
        if st.degree > len(rec.steps[i]):
            raise InvariantViolation("degree exceeds selection count")
        checks += 1
    if rec.k >= 2:
        t = tau(rec)
        tail = [set(s for s in rec.steps[i] if s > t) for i in rec.tracked]
        if not pairwise_disjoint(tail):
            raise InvariantViolation("selection sets overlap above tau")
        checks += 1
    for i, i2 in combinations(rec.tracked, 2):
        if merge_step(rec, i, i2) == 0:
            continue
        d = pair_distance(rec, i, i2)
        hi, hj = stats[i].depth, stats[i2].depth
        if d != hi + hj - 2 * lca_depth(rec, i, i2) or d > hi + hj:
            raise InvariantViolation(f"distance identity broken for ({i}, {i2})")
        checks += 1
    return checks


def degree_threshold_feasible(n: int, degrees: Sequence[int]) -> bool:
    return all(0 <= d < n for d in degrees)


__all__ = [
    "CoalescentTrace", "SelectionRecord", "TruncatedView", "ConditionedDraw",
    "UnsatisfiableCondition", "draw_pairs", "run_coalescent", "selection_record",
    "track_coalescent", "stats_from_flips", "pair_distance", "lca_depth", "merge_step",
    "tau", "tau_from_pairs", "truncate", "in_B", "predicate_B", "predicate_wtB",
    "pairwise_disjoint", "sample_conditional_degrees", "sample_conditional_batch", "check_trace_invariants",
    "check_record_invariants",
]

