"""Rooted labelled trees stored as parent arrays, and the random recursive tree.

Vertices are labelled ``1..n`` and vertex 1 is the root. ``parent[v]`` holds the
parent of ``v`` for ``v >= 2``; entries 0 and 1 are unused and set to 0. Every
tree built here is *increasing*: ``parent[v] < v``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class InvariantViolation(AssertionError):
    """A structural identity that must hold exactly was found broken."""


@dataclass(frozen=True)
class VertexStats:
    degree: int
    depth: int
    label: int


@dataclass(frozen=True, eq=False)
class TreeTopology:
    n: int
    parent: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"tree needs at least one vertex, got n={self.n}")
        par = np.asarray(self.parent, dtype=np.int64)
        if par.shape != (self.n + 1,):
            raise ValueError(f"parent array must have length n+1={self.n + 1}, got {par.shape}")
        if self.n >= 2:
            kids = np.arange(2, self.n + 1)
            body = par[2:]
            if np.any(body < 1) or np.any(body >= kids):
                raise ValueError("parent map must satisfy 1 <= parent[v] < v")
        par = par.copy()
        par[:2] = 0
        par.setflags(write=False)
        object.__setattr__(self, "parent", par)

    def __eq__(self, other):
        if not isinstance(other, TreeTopology):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.parent, other.parent)

    def __hash__(self):
        return hash((self.n, self.parent.tobytes()))

    @classmethod
    def from_parents(cls, parents: Sequence[int]) -> "TreeTopology":
        """Build from ``[parent(2), parent(3), ..., parent(n)]``."""
        n = len(parents) + 1
        return cls(n, np.concatenate([[0, 0], np.asarray(parents, dtype=np.int64)]))

    @classmethod
    def star(cls, n: int) -> "TreeTopology":
        return cls.from_parents([1] * (n - 1))

    @classmethod
    def path(cls, n: int) -> "TreeTopology":
        return cls.from_parents(list(range(1, n)))

    def key(self) -> tuple:
        """Canonical hashable encoding: the parent tuple of vertices 2..n."""
        return tuple(int(p) for p in self.parent[2:])

    # -- batch queries, memoized --------------------------------------------

    @cached_property
    def in_degrees(self) -> np.ndarray:
        deg = np.bincount(self.parent[2:], minlength=self.n + 1).astype(np.int64)
        deg[0] = 0
        deg.setflags(write=False)
        return deg

    @cached_property
    def depths(self) -> np.ndarray:
        # pointer jumping; O(n log height)
        n = self.n
        anc = self.parent.copy()
        anc[1] = 1
        anc[0] = 0
        dist = np.zeros(n + 1, dtype=np.int64)
        dist[2:] = 1
        while True:
            if np.all(anc[1:] == 1):
                break
            dist = dist + np.where(anc >= 1, dist[anc], 0)
            anc = anc[anc]
        dist.setflags(write=False)
        return dist

    def _check(self, v: int) -> int:
        v = int(v)
        if not 1 <= v <= self.n:
            raise ValueError(f"vertex {v} outside [1, {self.n}]")
        return v


def build_rrt(n: int, rng: np.random.Generator) -> TreeTopology:
    """Grow a random recursive tree: vertex ``m+1`` attaches to a uniform vertex of ``[m]``."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    par = np.zeros(n + 1, dtype=np.int64)
    if n >= 2:
        par[2:] = rng.integers(1, np.arange(2, n + 1))
    return TreeTopology(n, par)


def build_from_choices(choices: Sequence[int]) -> TreeTopology:
    """Deterministic attachment: ``choices[m-1]`` is the parent of vertex ``m+1``."""
    return TreeTopology.from_parents(choices)


def increasing_trees(n: int) -> Iterable[TreeTopology]:
    """All (n-1)! increasing trees on ``[n]``, one per attachment sequence."""
    import itertools

    for choice in itertools.product(*[range(1, m + 1) for m in range(1, n)]):
        yield build_from_choices(choice)


def in_degree(t: TreeTopology, v: int) -> int:
    v = t._check(v)
    return int(t.in_degrees[v])


def depth(t: TreeTopology, v: int) -> int:
    v = t._check(v)
    if "depths" in t.__dict__:
        return int(t.depths[v])
    par = t.parent
    h = 0
    while v != 1:
        v = par[v]
        h += 1
    return h


def lca(t: TreeTopology, u: int, v: int) -> int:
    # in an increasing tree the larger label can never be an ancestor of the smaller
    u, v = t._check(u), t._check(v)
    par = t.parent
    while u != v:
        if u > v:
            u = int(par[u])
        else:
            v = int(par[v])
    return u


def distance(t: TreeTopology, u: int, v: int) -> int:
    u, v = t._check(u), t._check(v)
    par = t.parent
    steps = 0
    while u != v:
        if u > v:
            u = int(par[u])
        else:
            v = int(par[v])
        steps += 1
    return steps


def vertex_stats(t: TreeTopology, v: int) -> VertexStats:
    return VertexStats(in_degree(t, v), depth(t, v), t._check(v))


def top_degree_order(t: TreeTopology, rng: np.random.Generator,
                     limit: int | None = None) -> list[VertexStats]:
    """Vertices by decreasing in-degree; ties are split by a uniform random permutation."""
    deg = t.in_degrees[1:]
    tiebreak = rng.permutation(t.n)
    order = np.lexsort((tiebreak, -deg)) + 1
    if limit is not None:
        order = order[:limit]
    return [VertexStats(int(t.in_degrees[v]), depth(t, int(v)), int(v)) for v in order]


def is_increasing(parent_of: dict[int, int] | np.ndarray) -> bool:
    items = parent_of.items() if isinstance(parent_of, dict) else enumerate(parent_of)
    return all(p < c for c, p in items if c >= 2)


def check_tree_invariants(t: TreeTopology, pairs: Iterable[tuple[int, int]] = ()) -> int:
    """Assert degree-sum and distance/LCA identities; returns the number of checks made."""
    checks = 1
    if int(t.in_degrees.sum()) != t.n - 1:
        raise InvariantViolation(f"degree sum {int(t.in_degrees.sum())} != n-1 = {t.n - 1}")
    for u, v in pairs:
        du, dv = depth(t, u), depth(t, v)
        w = lca(t, u, v)
        d = distance(t, u, v)
        if d != du + dv - 2 * depth(t, w) or d > du + dv:
            raise InvariantViolation(f"distance identity broken for ({u}, {v})")
        if (d == du + dv) != (w == 1):
            raise InvariantViolation(f"equality case of depth bound broken for ({u}, {v})")
        checks += 1
    return checks


def to_edge_csv(t: TreeTopology, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["child", "parent"])
    for v in range(2, t.n + 1):
        w.writerow([v, int(t.parent[v])])
    return buf.getvalue()


def from_edge_csv(text: str) -> TreeTopology:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    n = len(rows) + 1
    par = np.zeros(n + 1, dtype=np.int64)
    for row in rows:
        par[int(row["child"])] = int(row["parent"])
    return TreeTopology(n, par)
