"""Monte Carlo drivers with reproducible per-replicate seeding.

Every replicate ``r`` draws from ``default_rng(SeedSequence(seed, spawn_key=(r,)))``,
so results do not depend on how replicates are split over workers.  Reference
samples from the limit laws use the separate key ``REF_KEY``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from . import __version__
from .coalescent import (_record_from_events, _tracked_events, check_record_invariants,
                         check_trace_invariants, draw_pairs, pair_distance, sample_conditional_batch,
                         stats_from_flips, tau, tau_from_pairs)
from .limitlaws import (MARK_RHO, MU, SIGMA2, Rect, RegimeSpec, c_coef, factorial_moment,
                        ks_discrete, ks_distance, ks_two_sample, limit_tuple_cond_degree,
                        log2_floor, mark_rect_prob, mark_sample, norm_cdf, normalize_cond_degree,
                        poisson_binomial_pmf, poisson_cdf, poisson_pmf)
from .tree_core import build_rrt, check_tree_invariants, depth, distance, top_degree_order

REF_KEY = 2**31
QUANTILES = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)

DEFAULT_TOL = {
    "count_rel": 0.15,   # relative error of a mean count / factorial moment
    "tail_rel": 0.15,    # relative error of 2^d * P(degree >= d)
    "mark_ks": 0.1,
    "depth_ks": 0.05,
    "label_ks": 0.07,
    "corr": 0.05,
    "dist_ks": 0.07,
    "degree_ks": 0.1,
    "pmf_abs": 0.02,
    "se_mult": 3.0,
    "tau_cond": 0.05,
}


class ReplicateFailure(RuntimeError):
    pass


# -- parameter parsing ------------------------------------------------------

def resolve_label(spec: str, n: int) -> tuple[int, RegimeSpec]:
    """``abs:L``, ``pow:alpha`` (floor(n^alpha)), ``rho:r`` (floor(r n)) or ``last`` (n)."""
    kind, _, val = spec.partition(":")
    if kind == "last" and not val:
        return n, RegimeSpec("full")
    if kind == "abs":
        lab, reg = int(val), RegimeSpec("sublinear")
    elif kind == "pow":
        alpha = float(val)
        if not 0 < alpha < 1:
            raise ValueError(f"exponent must lie in (0, 1), got {alpha}")
        lab, reg = int(math.floor(n**alpha + 1e-9)), RegimeSpec("sublinear")
    elif kind == "rho":
        rho = float(val)
        lab, reg = int(math.floor(rho * n)), RegimeSpec("proportional", rho)
    else:
        raise ValueError(f"unrecognised label spec {spec!r}")
    if not 2 <= lab <= n:
        raise ValueError(f"label {lab} from {spec!r} must lie in [2, {n}]")
    if lab == n:
        reg = RegimeSpec("full")
    return lab, reg


def resolve_degree(spec: str | int, n: int) -> tuple[int, float]:
    """``abs:d`` or ``a:a`` (floor(a ln n)); returns (threshold, a = d / ln n)."""
    if isinstance(spec, (int, np.integer)):
        d = int(spec)
    else:
        kind, _, val = str(spec).partition(":")
        if kind == "abs":
            d = int(val)
        elif kind == "a":
            d = int(math.floor(float(val) * math.log(n)))
        else:
            raise ValueError(f"unrecognised degree spec {spec!r}")
    if d < 0 or d >= 2 * math.log(n):
        raise ValueError(f"degree threshold {d} must lie in [0, 2 ln n)")
    return d, d / math.log(n)


def parse_rects(text: str) -> list[Rect]:
    """``"a,b,c,d;a,b,c,d"`` -> rectangles ``(a,b] x (c,d]``; ``inf`` is allowed."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = [float(v) for v in part.split(",")]
        if len(vals) != 4:
            raise ValueError(f"rectangle {part!r} needs four numbers")
        out.append(Rect(*vals))
    return out


@dataclass(frozen=True)
class RectSet:
    rects: tuple[Rect, ...]

    def __post_init__(self):
        for i, r in enumerate(self.rects):
            for s in self.rects[i + 1:]:
                if r.overlaps(s):
                    raise ValueError("rectangles inside one test set must be disjoint")

    @classmethod
    def parse(cls, text: str) -> "RectSet":
        return cls(tuple(parse_rects(text)))

    @classmethod
    def plane(cls) -> "RectSet":
        return cls((Rect(-math.inf, math.inf, -math.inf, math.inf),))

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape, dtype=bool)
        for r in self.rects:
            mask |= r.contains(x, y)
        return mask

    def overlaps(self, other: "RectSet") -> bool:
        return any(r.overlaps(s) for r in self.rects for s in other.rects)

    def mark_prob(self) -> float:
        return sum(mark_rect_prob(r) for r in self.rects)


# -- config and report ------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    n: int
    replicates: int
    seed: int = 0
    workers: int = 1
    k: int = 1
    degrees: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    pairs: list | None = None
    j: list = field(default_factory=lambda: [0])
    orders: list = field(default_factory=list)
    rects: list = field(default_factory=list)
    k_values: list = field(default_factory=lambda: [2, 3])
    K_range: list = field(default_factory=lambda: [7, 100])
    eps: list = field(default_factory=lambda: [0.5, 1.0])
    n_values: list = field(default_factory=list)
    t_n: int | None = None
    mode: str = "auto"
    ref_size: int | None = None
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.mode not in ("auto", "full", "tracked"):
            raise ValueError(f"mode must be auto, full or tracked, got {self.mode!r}")

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOL[key]))

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        # worker count does not change results, so it is left out
        d = self.to_dict()
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StatRow:
    name: str
    n: int
    replicates: int
    estimate: float
    stderr: float | None = None
    ks: float | None = None
    reference: float | None = None
    tolerance: float | None = None
    passed: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.passed is not None:
            self.passed = bool(self.passed)
        for f in ("estimate", "stderr", "ks", "reference", "tolerance"):
            v = getattr(self, f)
            if v is not None:
                setattr(self, f, float(v))

    CSV_FIELDS = ("name", "n", "replicates", "estimate", "stderr", "ks", "reference",
                  "tolerance", "pass", "seed")

    def csv_row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return v
        status = "" if self.passed is None else ("pass" if self.passed else "fail")
        return [self.name, self.n, self.replicates, fmt(self.estimate), fmt(self.stderr), fmt(self.ks),
                fmt(self.reference), fmt(self.tolerance), status, self.seed]


@dataclass
class AggregateReport:
    experiment: str
    seed: int
    config: dict
    config_hash: str
    rows: list[StatRow] = field(default_factory=list)
    ecdf: dict[str, dict] = field(default_factory=dict)
    counts: dict[str, Any] = field(default_factory=dict)
    invariant_checks: int = 0
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.rows)

    def row(self, name: str) -> StatRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def header(self) -> str:
        return f"version={__version__} seed={self.seed} config={self.config_hash}"

    def to_json(self, include_timing: bool = True) -> str:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return json.dumps(d, sort_keys=True, indent=1, default=_json_default)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.header()}\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(StatRow.CSV_FIELDS)
        for r in self.rows:
            w.writerow(r.csv_row())
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def ecdf_summary(x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"count": 0}
    return {"count": int(x.size), "mean": float(x.mean()), "std": float(x.std()),
            "quantiles": {str(q): float(v) for q, v in zip(QUANTILES, np.quantile(x, QUANTILES))}}


# -- replicate scheduling ---------------------------------------------------

def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def reference_rng(seed: int) -> np.random.Generator:
    return replicate_rng(seed, REF_KEY)


def _run_block(fn: Callable, cfg: ExperimentConfig, lo: int, hi: int) -> list:
    out = []
    for rep in range(lo, hi):
        try:
            out.append(fn(cfg, rep, replicate_rng(cfg.seed, rep)))
        except Exception as exc:  # noqa: BLE001 - rethrown with replicate context
            raise ReplicateFailure(f"replicate {rep} (seed {cfg.seed}) failed: {exc!r}") from exc
    return out


def run_replicates(fn: Callable, cfg: ExperimentConfig) -> list:
    """Results of ``fn(cfg, rep, rng)`` in replicate order; static blocks over workers, fail-fast."""
    if cfg.workers == 1 or cfg.replicates == 1:
        return _run_block(fn, cfg, 0, cfg.replicates)
    edges = np.linspace(0, cfg.replicates, cfg.workers + 1).astype(int)
    results: list = []
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        futs = [ex.submit(_run_block, fn, cfg, int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
        try:
            for f in futs:
                results.extend(f.result())
        except Exception:
            for f in futs:
                f.cancel()
            raise
    return results


def _se(p: float, m: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / m)


def _report(cfg: ExperimentConfig) -> AggregateReport:
    return AggregateReport(cfg.experiment, cfg.seed, cfg.to_dict(), cfg.config_hash())


def _ks_row(name, cfg, sample, tol_key=None, n=None, graded=True) -> StatRow:
    ks = ks_distance(sample, norm_cdf)
    tol = cfg.tol(tol_key) if tol_key else None
    passed = (ks <= tol) if (graded and tol is not None) else None
    return StatRow(name, n or cfg.n, cfg.replicates, float(np.mean(sample)), float(np.std(sample) / math.sqrt(len(sample))),
                   ks, 0.0, tol, passed, cfg.seed)


# -- near-maximal degrees ---------------------------------------------------

def _near_max_marks(n: int, h, lab):
    ln = math.log(n)
    x = (np.asarray(h) - MU * ln) / math.sqrt(SIGMA2 * ln)
    y = (np.log(np.asarray(lab, dtype=float)) - MU * ln) / math.sqrt((1 - SIGMA2) * ln)
    return x, y


def _degree_marks(n: int, d: int, h, lab):
    """Depth/label marks normalized with the degree threshold ``d``."""
    ln = math.log(n)
    x = (np.asarray(h) - (ln - d / 2)) / math.sqrt(ln - d / 4)
    y = (np.log(np.asarray(lab, dtype=float)) - (ln - d / 2)) / math.sqrt(d / 4)
    return x, y


def _rep_near_max(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    n = cfg.n
    t = build_rrt(n, rng)
    deg = t.in_degrees
    L = log2_floor(n)
    top = top_degree_order(t, rng, limit=2)
    checks = check_tree_invariants(t, [(top[0].label, top[-1].label)])
    jmin = min(cfg.j)
    idx = np.flatnonzero(deg >= L + jmin)
    geq = {}
    for j in cfg.j:
        g = int(np.count_nonzero(deg >= L + j))
        exact = sum(int(np.count_nonzero(deg == L + jj)) for jj in range(j, int(deg.max()) - L + 1))
        if g != exact:
            raise AssertionError(f"count identity broken at j={j}")
        geq[j] = g
    checks += len(cfg.j)
    return {"geq": geq, "deg": deg[idx].astype(int), "depth": np.array([depth(t, int(v)) for v in idx], dtype=int),
            "label": idx.astype(int), "checks": checks}


def exp_near_max(cfg: ExperimentConfig) -> AggregateReport:
    n = cfg.n
    if n & (n - 1):
        raise ValueError("near-maximum experiments need n a power of two")
    t0 = time.perf_counter()
    reps = run_replicates(_rep_near_max, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    L = log2_floor(n)
    for j in cfg.j:
        c = np.array([r["geq"][j] for r in reps], dtype=float)
        ref = 2.0 ** (-j)
        mean, se = float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else float("nan")
        tol = cfg.tol("count_rel")
        rep.rows.append(StatRow(f"count_geq_j{j}", n, cfg.replicates, mean, se, None, ref, tol,
                                abs(mean / ref - 1) <= tol, cfg.seed))
        ks = ks_discrete(c, lambda x, m=ref: poisson_cdf(int(math.floor(x)), m))
        rep.rows.append(StatRow(f"count_geq_j{j}_poisson_ks", n, cfg.replicates, mean, se, ks, ref, None, None, cfg.seed))
        rep.counts[f"geq_j{j}"] = np.bincount(c.astype(int)).tolist()
    h = np.concatenate([r["depth"] for r in reps])
    lab = np.concatenate([r["label"] for r in reps])
    if h.size:
        x, y = _near_max_marks(n, h, lab)
        rep.rows.append(_ks_row("mark_depth", cfg, x, "mark_ks"))
        rep.rows.append(_ks_row("mark_label", cfg, y, "mark_ks", graded=False))
        corr = float(np.corrcoef(x, y)[0, 1]) if h.size > 2 else float("nan")
        rep.rows.append(StatRow("mark_corr", n, cfg.replicates, corr, None, None, MARK_RHO, None, None, cfg.seed))
        rx, ry = mark_sample(reference_rng(cfg.seed), cfg.ref_size or max(h.size, 1000))
        rep.rows.append(StatRow("mark_depth_vs_limit_sample", n, cfg.replicates, float(x.mean()), None,
                                ks_two_sample(x, rx), None, None, None, cfg.seed))
        rep.ecdf["mark_depth"] = ecdf_summary(x)
        rep.ecdf["mark_label"] = ecdf_summary(y)
    mx = [int(r["deg"].max()) - L for r in reps if r["deg"].size]
    rep.counts["max_degree_minus_log2"] = {str(v): mx.count(v) for v in sorted(set(mx))}
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- factorial moments ------------------------------------------------------

@dataclass(frozen=True)
class MomentSpec:
    j: tuple[int, ...]
    sets: tuple[RectSet, ...]
    orders: tuple[int, ...]

    def __post_init__(self):
        if not len(self.j) == len(self.sets) == len(self.orders):
            raise ValueError("j, sets and orders must have equal length")
        if any(b < a for a, b in zip(self.j, self.j[1:])):
            raise ValueError("j sequence must be non-decreasing")
        for p in range(len(self.j)):
            for q in range(p + 1, len(self.j)):
                if self.j[p] == self.j[q] and self.sets[p].overlaps(self.sets[q]):
                    raise ValueError("test sets sharing a degree offset must be disjoint")

    @property
    def exact_entries(self) -> int:
        """Number of leading entries counted at exact degree (the rest use ``>=``)."""
        last = self.j[-1] if self.j else 0
        return sum(1 for x in self.j if x < last)

    def target(self, eps: float = 0.0) -> float:
        K1 = self.exact_entries
        val = 1.0
        for p, (jj, s, c) in enumerate(zip(self.j, self.sets, self.orders)):
            if c == 0:
                continue
            rate = 2.0 ** (-(jj + 1) + eps) if p < K1 else 2.0 ** (-self.j[-1] + eps)
            val *= (rate * s.mark_prob()) ** c
        return val


def moment_spec(cfg: ExperimentConfig) -> MomentSpec:
    K = len(cfg.j)
    sets = [RectSet.parse(r) if isinstance(r, str) else RectSet(tuple(Rect(*x) for x in r)) for r in cfg.rects] \
        if cfg.rects else [RectSet.plane()] * K
    orders = list(cfg.orders) if cfg.orders else [1] * K
    return MomentSpec(tuple(cfg.j), tuple(sets), tuple(orders))


def _rep_moments(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    n = cfg.n
    spec = moment_spec(cfg)
    t = build_rrt(n, rng)
    deg = t.in_degrees
    checks = check_tree_invariants(t)
    L = log2_floor(n)
    K1 = spec.exact_entries
    cand = np.flatnonzero(deg >= L + min(spec.j))
    hs = np.array([depth(t, int(v)) for v in cand], dtype=float)
    counts = []
    for p, (jj, s) in enumerate(zip(spec.j, spec.sets)):
        d = L + jj
        sel = deg[cand] == d if p < K1 else deg[cand] >= d
        x, y = _degree_marks(n, d, hs[sel], cand[sel])
        counts.append(int(np.count_nonzero(s.contains(x, y))))
    return {"counts": counts, "checks": checks}


def exp_factorial_moments(cfg: ExperimentConfig) -> AggregateReport:
    n = cfg.n
    if n & (n - 1):
        raise ValueError("moment experiments need n a power of two")
    spec = moment_spec(cfg)
    t0 = time.perf_counter()
    reps = run_replicates(_rep_moments, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    counts = np.array([r["counts"] for r in reps], dtype=float)
    est, se = factorial_moment(counts, spec.orders)
    target = spec.target()
    tol = cfg.tol("count_rel")
    ok = abs(est - target) <= tol * target if target > 0 else est == 0
    rep.rows.append(StatRow("factorial_moment", n, cfg.replicates, est, se, None, target, tol, ok, cfg.seed))
    for p in range(counts.shape[1]):
        rep.rows.append(StatRow(f"mean_count_{p}", n, cfg.replicates, float(counts[:, p].mean()),
                                float(counts[:, p].std(ddof=1) / math.sqrt(len(counts))) if len(counts) > 1 else None,
                                None, None, None, None, cfg.seed))
    rep.counts["per_entry_mean"] = counts.mean(axis=0).tolist()
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- conditional degrees ----------------------------------------------------

def _cond_full(cfg: ExperimentConfig) -> bool:
    if cfg.mode == "auto":
        return cfg.n <= 4096
    return cfg.mode == "full"


def _rep_cond_degree(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    n = cfg.n
    degrees = [resolve_degree(s, n)[0] for s in cfg.degrees]
    draw = sample_conditional_batch(n, degrees, rng, 1, full=_cond_full(cfg))[0]
    rec = draw.record
    checks = check_record_invariants(rec)
    if draw.trace is not None:
        checks += check_trace_invariants(draw.trace, rec)
    st = [stats_from_flips(rec, i) for i in rec.tracked]
    k = rec.k
    dist = [pair_distance(rec, i, j) for i in range(1, k + 1) for j in range(i + 1, k + 1)]
    return {"stats": [(s.degree, s.depth, s.label) for s in st], "dist": dist, "checks": checks,
            "attempts": draw.attempts}


def exp_cond_degree(cfg: ExperimentConfig) -> AggregateReport:
    n = cfg.n
    resolved = [resolve_degree(s, n) for s in cfg.degrees]
    if not resolved:
        raise ValueError("need at least one degree threshold")
    degrees = [d for d, _ in resolved]
    avals = [a for _, a in resolved]
    k = len(degrees)
    t0 = time.perf_counter()
    reps = run_replicates(_rep_cond_degree, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    norm = [normalize_cond_degree(r["stats"], n, degrees, r["dist"]) for r in reps]
    limit = limit_tuple_cond_degree(avals, k, reference_rng(cfg.seed), cfg.ref_size or cfg.replicates)
    for i in range(k):
        dep = np.array([z.per_vertex[i][1] for z in norm])
        rep.rows.append(_ks_row(f"depth_v{i + 1}", cfg, dep, "depth_ks"))
        rep.rows.append(StatRow(f"depth_v{i + 1}_vs_limit_sample", n, cfg.replicates, float(dep.mean()), None,
                                ks_two_sample(dep, limit["depth"][:, i]), None, None, None, cfg.seed))
        rep.ecdf[f"depth_v{i + 1}"] = ecdf_summary(dep)
        rep.counts[f"degree_v{i + 1}_min"] = int(min(r["stats"][i][0] for r in reps))
        if degrees[i] > 0:
            lab = np.array([z.per_vertex[i][2] for z in norm])
            rep.rows.append(_ks_row(f"label_v{i + 1}", cfg, lab, "label_ks"))
            target = math.sqrt(avals[i] / (4 - avals[i]))
            corr = float(np.corrcoef(dep, lab)[0, 1])
            tol = cfg.tol("corr")
            rep.rows.append(StatRow(f"depth_label_corr_v{i + 1}", n, cfg.replicates, corr, None, None, target, tol,
                                    abs(corr - target) <= tol, cfg.seed))
            rep.ecdf[f"label_v{i + 1}"] = ecdf_summary(lab)
    for p, (i, j) in enumerate((i, j) for i in range(k) for j in range(i + 1, k)):
        dd = np.array([z.per_pair[p] for z in norm])
        rep.rows.append(_ks_row(f"dist_v{i + 1}_v{j + 1}", cfg, dd, "dist_ks"))
        rep.ecdf[f"dist_v{i + 1}_v{j + 1}"] = ecdf_summary(dd)
    rep.counts["mean_attempts"] = float(np.mean([r["attempts"] for r in reps]))
    rep.counts["degrees"] = degrees
    rep.counts["a"] = avals
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- fixed labels -----------------------------------------------------------

def _label_setup(cfg: ExperimentConfig):
    res = [resolve_label(s, cfg.n) for s in cfg.labels]
    labels = [x for x, _ in res]
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be distinct")
    pairs = [tuple(p) for p in cfg.pairs] if cfg.pairs is not None else \
        [(i, j) for i in range(len(labels)) for j in range(i + 1, len(labels))]
    return labels, [r for _, r in res], pairs


def _rep_fixed_label(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    labels, _, pairs = _label_setup(cfg)
    t = build_rrt(cfg.n, rng)
    lab_pairs = [(labels[i], labels[j]) for i, j in pairs]
    checks = check_tree_invariants(t, lab_pairs)
    deg = t.in_degrees
    return {"degree": [int(deg[x]) for x in labels], "depth": [depth(t, x) for x in labels],
            "dist": [distance(t, u, v) for u, v in lab_pairs], "checks": checks}


def exp_fixed_label(cfg: ExperimentConfig) -> AggregateReport:
    n = cfg.n
    labels, regimes, pairs = _label_setup(cfg)
    if not labels:
        raise ValueError("need at least one label")
    t0 = time.perf_counter()
    reps = run_replicates(_rep_fixed_label, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    R = cfg.replicates
    deg = np.array([r["degree"] for r in reps], dtype=float)
    dep = np.array([r["depth"] for r in reps], dtype=float)
    for i, (lab, reg) in enumerate(zip(labels, regimes)):
        tag = f"l{lab}"
        ll = math.log(lab)
        dterm = (dep[:, i] - ll) / math.sqrt(ll)
        rep.rows.append(_ks_row(f"depth_{tag}", cfg, dterm, "depth_ks", graded=reg.regime == "sublinear"))
        rep.ecdf[f"depth_{tag}"] = ecdf_summary(dterm)
        if reg.regime == "sublinear":
            m = math.log(n / lab)
            z = (deg[:, i] - m) / math.sqrt(m)
            rep.rows.append(_ks_row(f"degree_{tag}", cfg, z, "degree_ks"))
            rep.ecdf[f"degree_{tag}"] = ecdf_summary(z)
        elif reg.regime == "proportional":
            mean = math.log(1 / reg.rho)
            tol = cfg.tol("pmf_abs")
            for v in (0, 1, 2):
                p = float(np.mean(deg[:, i] == v))
                ref = poisson_pmf(v, mean)
                rep.rows.append(StatRow(f"degree_{tag}_pmf{v}", n, R, p, _se(p, R), None, ref, tol,
                                        abs(p - ref) <= tol, cfg.seed))
        else:
            mx = float(np.abs(deg[:, i]).max())
            rep.rows.append(StatRow(f"degree_{tag}_zero", n, R, mx, 0.0, None, 0.0, 0.0, mx == 0.0, cfg.seed))
        rep.counts[f"degree_{tag}"] = np.bincount(deg[:, i].astype(int)).tolist()
    dist = np.array([r["dist"] for r in reps], dtype=float).reshape(R, len(pairs))
    ref_rng = reference_rng(cfg.seed)
    for p, (i, j) in enumerate(pairs):
        li, lj = labels[i], labels[j]
        s = math.log(li) + math.log(lj)
        z = (dist[:, p] - s) / math.sqrt(s)
        rep.rows.append(_ks_row(f"dist_l{li}_l{lj}", cfg, z, "dist_ks"))
        N = ref_rng.standard_normal((cfg.ref_size or R, 2))
        limit = c_coef(li, lj) * N[:, 0] + c_coef(lj, li) * N[:, 1]
        rep.rows.append(StatRow(f"dist_l{li}_l{lj}_vs_limit_sample", n, R, float(z.mean()), None,
                                ks_two_sample(z, limit), None, None, None, cfg.seed))
        rep.ecdf[f"dist_l{li}_l{lj}"] = ecdf_summary(z)
    rep.counts["labels"] = labels
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- tau --------------------------------------------------------------------

def exact_tau_survival(n: int, k: int, K: int) -> float:
    """P(tau_k >= K): some step j >= K picks both positions inside the first k."""
    q = 1.0
    for j in range(max(K, 2), n + 1):
        q *= 1.0 - k * (k - 1) / (j * (j - 1))
    return 1.0 - q


def _rep_tau(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    n = cfg.n
    a, b = draw_pairs(n, rng)
    kmax = max(cfg.k_values)
    taus = {k: tau_from_pairs(a, b, n, k) for k in cfg.k_values}
    # cross-check against the selection-set definition on the largest tracked set
    xi = rng.integers(0, 2, size=n - 1)
    events = _tracked_events(n, a, b, kmax)
    rec = _record_from_events(n, kmax, events, [int(xi[n - ev.step]) for ev in events])
    if tau(rec) != taus[kmax]:
        raise AssertionError("tau from merge positions disagrees with selection sets")
    checks = 1 + check_record_invariants(rec)
    out = {"tau": taus, "checks": checks}
    if cfg.degrees:
        degrees = [resolve_degree(s, n)[0] for s in cfg.degrees]
        crec = sample_conditional_batch(n, degrees, rng, 1, full=False)[0].record
        checks += check_record_invariants(crec)
        out["tau_cond"] = tau(crec) if crec.k >= 2 else 0
        out["checks"] = checks
    return out


def exp_tau_tightness(cfg: ExperimentConfig) -> AggregateReport:
    n = cfg.n
    if min(cfg.k_values) < 2:
        raise ValueError("tau needs k >= 2")
    Klo, Khi = cfg.K_range
    if not 3 <= Klo <= Khi <= n:
        raise ValueError(f"K range must satisfy 3 <= K_lo <= K_hi <= n, got {cfg.K_range}")
    t0 = time.perf_counter()
    reps = run_replicates(_rep_tau, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    R = cfg.replicates
    mult = cfg.tol("se_mult")
    for k in cfg.k_values:
        taus = np.array([r["tau"][k] for r in reps])
        worst, worst_K, ok = -math.inf, None, True
        max_dev = 0.0
        for K in range(Klo, Khi + 1):
            s = float(np.mean(taus >= K))
            se = max(_se(s, R), 1.0 / R)
            env = k * k / (K - 2)
            margin = (s - env) / se
            if margin > worst:
                worst, worst_K = margin, K
            ok &= s <= env + mult * se
            ex = exact_tau_survival(n, k, K)
            max_dev = max(max_dev, abs(s - ex) / max(_se(ex, R), 1.0 / R))
        rep.rows.append(StatRow(f"tau{k}_envelope", n, R, worst, None, None, float(worst_K), mult, ok, cfg.seed))
        rep.rows.append(StatRow(f"tau{k}_vs_exact_max_z", n, R, max_dev, None, None, 0.0, None, None, cfg.seed))
        rep.counts[f"tau{k}_survival"] = {K: float(np.mean(taus >= K)) for K in (Klo, 10, 20, 50, Khi)}
    if cfg.degrees:
        K = math.ceil(math.log(n) ** 2)
        tc = np.array([r["tau_cond"] for r in reps])
        s = float(np.mean(tc >= K))
        tol = cfg.tol("tau_cond")
        rep.rows.append(StatRow(f"tau_cond_survival_K{K}", n, R, s, _se(s, R), None, None, tol, s <= tol, cfg.seed))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- late-step depth --------------------------------------------------------

def truncation_step(n: int) -> int:
    return math.ceil(math.log(n) ** 2)


def exact_h2_tail(t_n: int, x: float) -> float:
    """P(sum_{j=2}^{t_n-1} Bernoulli(1/j) >= x) for an unconditioned vertex."""
    thr = math.ceil(x - 1e-12)
    if thr <= 0:
        return 1.0
    probs = 1.0 / np.arange(2, t_n)
    if probs.size == 0:
        return 0.0
    pmf = poisson_binomial_pmf(probs, min(thr, probs.size))
    return float(max(0.0, 1.0 - pmf[:thr].sum()))


def _h2_sizes(cfg: ExperimentConfig) -> list[int]:
    return [int(x) for x in cfg.n_values] if cfg.n_values else [cfg.n]


def _rep_h2(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    out: dict = {"checks": 0}
    for n in _h2_sizes(cfg):
        t_n = cfg.t_n or truncation_step(n)
        degrees = [resolve_degree(s, n)[0] for s in cfg.degrees] or [0]
        rec = sample_conditional_batch(n, degrees, rng, 1, full=False)[0].record
        out["checks"] += check_record_invariants(rec)
        out[f"deg_{n}"] = [sum(f for s, f in zip(rec.steps[i], rec.flips[i]) if s < t_n) for i in rec.tracked]
        labs = []
        for spec in cfg.labels:
            lab, _ = resolve_label(spec, n)
            t = build_rrt(lab, rng)  # the tree on [lab] is all that matters for this vertex
            v = lab
            while v >= t_n:
                v = int(t.parent[v])
            labs.append(depth(t, v))
        out[f"lab_{n}"] = labs
    return out


def exp_h2_negligible(cfg: ExperimentConfig) -> AggregateReport:
    t0 = time.perf_counter()
    reps = run_replicates(_rep_h2, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    R = cfg.replicates
    mult = cfg.tol("se_mult")
    unconditioned = not cfg.degrees or all(resolve_degree(s, cfg.n)[0] == 0 for s in cfg.degrees)
    for eps in cfg.eps:
        series = []
        for n in _h2_sizes(cfg):
            t_n = cfg.t_n or truncation_step(n)
            thr = eps * math.sqrt(math.log(n))
            h2 = np.array([r[f"deg_{n}"][0] for r in reps])
            p = float(np.mean(h2 >= thr))
            series.append(p)
            if unconditioned:
                ex = exact_h2_tail(t_n, thr)
                se = max(_se(ex, R), 1.0 / R)
                rep.rows.append(StatRow(f"h2_degree_n{n}_eps{eps}", n, R, p, _se(p, R), None, ex, mult,
                                        abs(p - ex) <= mult * se, cfg.seed))
            else:
                rep.rows.append(StatRow(f"h2_degree_n{n}_eps{eps}", n, R, p, _se(p, R), None, None, None, None, cfg.seed))
            for q, spec in enumerate(cfg.labels):
                hl = np.array([r[f"lab_{n}"][q] for r in reps])
                pl = float(np.mean(hl >= thr))
                rep.rows.append(StatRow(f"h2_label_{spec}_n{n}_eps{eps}", n, R, pl, _se(pl, R), None, None, None,
                                        None, cfg.seed))
        if len(series) > 1:
            mono = all(b <= a for a, b in zip(series, series[1:]))
            rep.rows.append(StatRow(f"h2_degree_trend_eps{eps}", cfg.n, R, float(mono), None, None, None, None,
                                    None, cfg.seed))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- degree tail ------------------------------------------------------------

def exact_degree_tail(n: int, d: int) -> float:
    """P(degree of a uniform vertex >= d) = 2^-d P(#selections >= d); selections are Bernoulli(2/j)."""
    probs = np.minimum(2.0 / np.arange(2, n + 1), 1.0)
    if d == 0:
        return 1.0
    pmf = poisson_binomial_pmf(probs, d)
    return float(2.0 ** (-d) * max(0.0, 1.0 - pmf[:d].sum()))


def _rep_degree_tail(cfg: ExperimentConfig, rep: int, rng: np.random.Generator) -> dict:
    k = len(cfg.degrees) or cfg.k
    rec = sample_conditional_batch(cfg.n, [0] * k, rng, 1, full=False)[0].record
    return {"deg": [stats_from_flips(rec, i).degree for i in rec.tracked], "checks": check_record_invariants(rec)}


def exp_degree_tail(cfg: ExperimentConfig) -> AggregateReport:
    n = cfg.n
    degrees = [resolve_degree(s, n)[0] for s in cfg.degrees]
    if not degrees:
        raise ValueError("need degree thresholds")
    t0 = time.perf_counter()
    reps = run_replicates(_rep_degree_tail, cfg)
    rep = _report(cfg)
    rep.invariant_checks = sum(r["checks"] for r in reps)
    R = cfg.replicates
    deg = np.array([r["deg"] for r in reps])
    hit = np.all(deg >= np.asarray(degrees)[None, :], axis=1)
    p = float(hit.mean())
    scale = 2.0 ** sum(degrees)
    tol = cfg.tol("tail_rel")
    est = p * scale
    rep.rows.append(StatRow("scaled_tail", n, R, est, _se(p, R) * scale, None, 1.0, tol, abs(est - 1) <= tol, cfg.seed))
    if len(degrees) == 1:
        ex = exact_degree_tail(n, degrees[0]) * scale
        rep.rows.append(StatRow("scaled_tail_exact", n, R, ex, None, None, 1.0, None, None, cfg.seed))
    rep.wall_clock = time.perf_counter() - t0
    return rep


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], AggregateReport]] = {
    "near-max": exp_near_max,
    "moments": exp_factorial_moments,
    "cond-degree": exp_cond_degree,
    "fixed-label": exp_fixed_label,
    "tau": exp_tau_tightness,
    "h2": exp_h2_negligible,
    "degree-tail": exp_degree_tail,
}


def run_experiment(cfg: ExperimentConfig) -> AggregateReport:
    try:
        fn = EXPERIMENTS[cfg.experiment]
    except KeyError:
        raise ValueError(f"unknown experiment {cfg.experiment!r}; choose from {sorted(EXPERIMENTS)}") from None
    return fn(cfg)
