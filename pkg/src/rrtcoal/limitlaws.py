"""Limit objects: constants, mark and point-process samplers, normalizers and goodness-of-fit.

Logarithms are natural throughout, except the degree centering ``floor(log2 n)``
and the fractional part ``eps_n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

LN2 = math.log(2.0)
MU = 1.0 - 1.0 / (2.0 * LN2)
SIGMA2 = 1.0 - 1.0 / (4.0 * LN2)
MARK_RHO = math.sqrt(1.0 - MU / SIGMA2)  # correlation of the two mark coordinates


@dataclass(frozen=True)
class LimitConstants:
    mu: float = MU
    sigma2: float = SIGMA2

    @staticmethod
    def eps_n(n: int) -> float:
        return eps_n(n)


def eps_n(n: int) -> float:
    if n < 1:
        raise ValueError("n must be positive")
    if n & (n - 1) == 0:
        return 0.0
    return math.log2(n) - math.floor(math.log2(n))


def log2_floor(n: int) -> int:
    return int(n).bit_length() - 1


# -- elementary distributions ----------------------------------------------

def norm_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def poisson_cdf(d: int, mean: float) -> float:
    if d < 0:
        return 0.0
    term, acc = math.exp(-mean), 0.0
    for i in range(d + 1):
        if i:
            term *= mean / i
        acc += term
    return min(acc, 1.0)


def poisson_pmf(d: int, mean: float) -> float:
    if d < 0:
        return 0.0
    return math.exp(-mean + d * math.log(mean) - math.lgamma(d + 1)) if mean > 0 else float(d == 0)


def poisson_binomial_pmf(probs: np.ndarray, kmax: int) -> np.ndarray:
    """pmf on ``0..kmax`` of a sum of independent Bernoulli(p_i), via the generating function on the unit circle."""
    probs = np.asarray(probs, dtype=float)
    m = 1 << max(6, int(kmax + 1).bit_length() + 2)
    z = np.exp(2j * np.pi * np.arange(m) / m)
    logg = np.zeros(m, dtype=complex)
    for chunk in np.array_split(probs, max(1, probs.size // 100_000)):
        logg += np.log1p(chunk[None, :] * (z[:, None] - 1.0)).sum(axis=1)
    coef = np.fft.fft(np.exp(logg)).real / m
    return np.clip(coef[: kmax + 1], 0.0, 1.0)


# -- samplers ---------------------------------------------------------------

def mark_from_normals(M, N):
    M = np.asarray(M, dtype=float)
    N = np.asarray(N, dtype=float)
    r = MU / SIGMA2
    return M * math.sqrt(1.0 - r) + N * math.sqrt(r), M


def mark_sample(rng: np.random.Generator, size: int | None = None):
    """Depth/label mark of a near-maximal-degree vertex in the limit."""
    M = rng.standard_normal(size)
    N = rng.standard_normal(size)
    x, y = mark_from_normals(M, N)
    if size is None:
        return float(x), float(y)
    return x, y


def ppp_sample(lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson process with intensity ``2^-x ln 2`` on ``[lo, hi)``; ``hi`` may be ``inf``."""
    if not lo < hi or math.isinf(lo):
        raise ValueError(f"window [{lo}, {hi}) is empty or unbounded below")
    top = 2.0**-lo
    bot = 0.0 if math.isinf(hi) else 2.0**-hi
    count = rng.poisson(top - bot)
    u = rng.random(count)
    return np.sort(-np.log2(top - u * (top - bot)))


# -- regimes ----------------------------------------------------------------

@dataclass(frozen=True)
class RegimeSpec:
    regime: str  # "sublinear", "proportional" or "full"
    rho: float | None = None

    def __post_init__(self):
        if self.regime not in ("sublinear", "proportional", "full"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "proportional":
            if self.rho is None or not 0.0 < self.rho < 1.0:
                raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        elif self.rho is not None:
            raise ValueError("rho is only meaningful in the proportional regime")


def pr_value(y: float, spec: RegimeSpec, d: int) -> float:
    """Limiting degree CDF of a fixed-label vertex: normal, Poisson or degenerate by regime."""
    if spec.regime == "sublinear":
        return float(norm_cdf(y))
    if spec.regime == "proportional":
        return poisson_cdf(d, math.log(1.0 / spec.rho))
    return 1.0


# -- normalization ----------------------------------------------------------

@dataclass(frozen=True)
class NormalizedTuple:
    per_vertex: tuple[tuple[float, float, float], ...]
    per_pair: tuple[float, ...] = ()


def _cond_params(n: int, d: float) -> tuple[float, float, float, float]:
    ln = math.log(n)
    h_scale2 = ln - d / 4.0
    if d >= 2 * ln or h_scale2 <= 0:
        raise ValueError(f"degree threshold {d} must stay below 2 ln n = {2 * ln:.3f}")
    return ln - d / 2.0, math.sqrt(h_scale2), ln - d / 2.0, math.sqrt(d / 4.0)


def normalize_cond_degree(stats_: Sequence[tuple[int, int, int]], n: int, degrees: Sequence[int],
                          distances: Sequence[int] = ()) -> NormalizedTuple:
    """Center/scale depth, log-label and pair distances given degree thresholds.

    The degree entry is passed through as ``degree - d_i``.  The label term is
    NaN when ``d_i = 0`` (no label scale).
    """
    if len(stats_) != len(degrees):
        raise ValueError("one degree threshold per vertex is required")
    per = []
    for (deg, h, lab), d in zip(stats_, degrees):
        hc, hs, lc, ls = _cond_params(n, d)
        label_term = (math.log(lab) - lc) / ls if ls > 0 else float("nan")
        per.append((float(deg - d), (h - hc) / hs, label_term))
    pairs = []
    k = len(degrees)
    idx = [(i, j) for i in range(k) for j in range(i + 1, k)]
    if distances and len(distances) != len(idx):
        raise ValueError("one distance per vertex pair is required")
    for (i, j), dist in zip(idx, distances):
        c, s = pair_dist_params(n, degrees[i], degrees[j])
        pairs.append((dist - c) / s)
    return NormalizedTuple(tuple(per), tuple(pairs))


def pair_dist_params(n: int, d_i: float, d_j: float) -> tuple[float, float]:
    ln = math.log(n)
    s2 = 2 * ln - (d_i + d_j) / 4.0
    if s2 <= 0:
        raise ValueError("distance scale must be positive")
    return 2 * ln - (d_i + d_j) / 2.0, math.sqrt(s2)


def denormalize_cond_degree(nt: NormalizedTuple, n: int, degrees: Sequence[int]) -> NormalizedTuple:
    """Inverse of :func:`normalize_cond_degree`; labels come back as real numbers."""
    per = []
    for (dt, ht, lt), d in zip(nt.per_vertex, degrees):
        hc, hs, lc, ls = _cond_params(n, d)
        lab = math.exp(lt * ls + lc) if ls > 0 else float("nan")
        per.append((dt + d, ht * hs + hc, lab))
    k = len(degrees)
    idx = [(i, j) for i in range(k) for j in range(i + 1, k)]
    pairs = []
    for (i, j), z in zip(idx, nt.per_pair):
        c, s = pair_dist_params(n, degrees[i], degrees[j])
        pairs.append(z * s + c)
    return NormalizedTuple(tuple(per), tuple(pairs))


def regime_for(n: int, label: int, rho: float | None = None) -> RegimeSpec:
    if label == n:
        return RegimeSpec("full")
    if rho is not None:
        return RegimeSpec("proportional", rho)
    return RegimeSpec("sublinear")


def normalize_fixed_label(stats_: Sequence[tuple[int, int, int]], n: int, labels: Sequence[int],
                          regimes: Sequence[RegimeSpec] | None = None,
                          distances: Sequence[int] = ()) -> NormalizedTuple:
    """Degree term per regime, depth term ``(h - ln l)/sqrt(ln l)``, distances centered by ``ln l_i + ln l_j``."""
    regimes = list(regimes) if regimes is not None else [regime_for(n, x) for x in labels]
    if any(x < 2 for x in labels):
        raise ValueError("labels must be at least 2")
    per = []
    for (deg, h, _), lab, spec in zip(stats_, labels, regimes):
        ll = math.log(lab)
        if spec.regime == "sublinear":
            m = math.log(n / lab)
            dterm = (deg - m) / math.sqrt(m)
        else:
            dterm = float(deg)
        per.append((dterm, (h - ll) / math.sqrt(ll), float(lab)))
    k = len(labels)
    idx = [(i, j) for i in range(k) for j in range(i + 1, k)]
    pairs = []
    for (i, j), dist in zip(idx, distances):
        s = math.log(labels[i]) + math.log(labels[j])
        pairs.append((dist - s) / math.sqrt(s))
    return NormalizedTuple(tuple(per), tuple(pairs))


def c_coef(l_i: int, l_j: int) -> float:
    a, b = math.log(l_i), math.log(l_j)
    return math.sqrt(a / (a + b))


# -- limit tuples -----------------------------------------------------------

def limit_tuple_cond_degree(a: Sequence[float] | None, k: int, rng: np.random.Generator,
                            size: int = 1) -> dict[str, np.ndarray]:
    """Samples of the conditional-degree limit.

    Returns ``depth`` and ``label`` arrays of shape ``(size, k)`` and ``dist`` of
    shape ``(size, k(k-1)/2)``.  With ``a=None`` (bounded degrees) depths are
    independent standard normals, labels are NaN, and distances combine depths
    with equal weights.
    """
    if a is not None:
        a = np.asarray(a, dtype=float)
        if a.shape != (k,):
            raise ValueError("need one a_i per vertex")
        if np.any(a < 0) or np.any(a >= 2):
            raise ValueError("each a_i must lie in [0, 2)")
    M = rng.standard_normal((size, k))
    N = rng.standard_normal((size, k))
    if a is None:
        depth = N
        label = np.full((size, k), np.nan)
        w = np.full(k, 4.0)
    else:
        c = np.sqrt(a / (4 - a))
        depth = M * c + N * np.sqrt(1 - c**2)
        label = M
        w = 4.0 - a
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    dist = np.empty((size, len(pairs)))
    for col, (i, j) in enumerate(pairs):
        dist[:, col] = (np.sqrt(w[i]) * depth[:, i] + np.sqrt(w[j]) * depth[:, j]) / math.sqrt(w[i] + w[j])
    return {"depth": depth, "label": label, "dist": dist}


# -- goodness of fit --------------------------------------------------------

def ks_distance(samples, cdf: Callable) -> float:
    """One-sample Kolmogorov distance ``sup |F_m - F|`` (ECDF jumps checked on both sides)."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise ValueError("need at least one sample")
    F = np.asarray(cdf(x), dtype=float)
    hi = np.arange(1, m + 1) / m
    lo = np.arange(0, m) / m
    return float(max(np.max(hi - F), np.max(F - lo), 0.0))


def ks_discrete(samples, cdf: Callable[[float], float]) -> float:
    """Kolmogorov distance for a sample against a CDF, evaluated at and just left of each sample value."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("need at least one sample")
    vals, counts = np.unique(x, return_counts=True)
    ecdf_right = np.cumsum(counts) / x.size
    ecdf_left = ecdf_right - counts / x.size
    F_right = np.array([cdf(v) for v in vals])
    F_left = np.array([cdf(np.nextafter(v, -np.inf)) for v in vals])
    return float(max(np.max(np.abs(ecdf_right - F_right)), np.max(np.abs(ecdf_left - F_left))))


def ks_two_sample(x, y) -> float:
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    if x.size == 0 or y.size == 0:
        raise ValueError("need non-empty samples")
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def ks_critical(m: int, alpha: float = 1e-3) -> float:
    """Asymptotic two-sided Kolmogorov critical value ``c(alpha)/sqrt(m)``."""
    return float(stats.kstwobign.isf(alpha)) / math.sqrt(m)


def falling(x: np.ndarray, c: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    for r in range(c):
        out = out * (x - r)
    return out


def factorial_moment(counts, orders: Sequence[int]) -> tuple[float, float]:
    """Mean and standard error of ``prod_k (count_k)_{c_k}`` over replicates.

    ``counts`` has shape ``(replicates, K)``.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    if counts.shape[1] != len(orders):
        raise ValueError("one order per count column is required")
    if any(c < 0 for c in orders):
        raise ValueError("orders must be non-negative")
    prod = np.ones(counts.shape[0])
    for col, c in enumerate(orders):
        prod = prod * falling(counts[:, col], c)
    m = prod.size
    se = float(prod.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
    return float(prod.mean()), se


# -- mark-law probabilities -------------------------------------------------

@dataclass(frozen=True)
class Rect:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a < self.b and self.c < self.d):
            raise ValueError(f"degenerate rectangle ({self.a},{self.b}]x({self.c},{self.d}]")

    def contains(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return (x > self.a) & (x <= self.b) & (y > self.c) & (y <= self.d)

    def overlaps(self, other: "Rect") -> bool:
        return (min(self.b, other.b) > max(self.a, other.a)
                and min(self.d, other.d) > max(self.c, other.c))


def mark_rect_prob(r: Rect) -> float:
    """P(mark in (a,b]x(c,d]) by integrating over the label coordinate M."""
    s = math.sqrt(MU / SIGMA2)
    lo, hi = max(r.c, -40.0), min(r.d, 40.0)
    if lo >= hi:
        return 0.0

    def inner(m):
        # first coordinate = rho*m + s*N
        return float(norm_cdf((r.b - MARK_RHO * m) / s) - norm_cdf((r.a - MARK_RHO * m) / s)) \
            * math.exp(-0.5 * m * m) / math.sqrt(2 * math.pi)

    val, _ = integrate.quad(inner, lo, hi, limit=200, epsabs=1e-12)
    return float(val)
