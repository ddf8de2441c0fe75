"""Deterministic outlier verification on a single numeric metric.

Every detector answers one question: given the metric values of a population
and one member's value, is that member an outlier? ``outlier_mask`` answers it
for every member at once and agrees with ``verify`` member by member.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

from pcor.dataset import Population, Record
from pcor.errors import ConfigurationError

GRUBBS = "grubbs"
LOF = "lof"
HISTOGRAM = "histogram"
# Test stub: every non-empty population containing the target is "outlying".
ALWAYS = "always"
KINDS = (GRUBBS, LOF, HISTOGRAM, ALWAYS)

# Added to mean reachability distances so duplicate clusters get a finite density.
_LRD_FLOOR = 1e-10


@dataclass(frozen=True)
class DetectorSpec:
    kind: str = LOF
    grubbs_alpha: float = 0.05
    lof_k: int = 10
    lof_threshold: float = 1.5
    hist_freq_coeff: float = 2.5e-3
    min_population: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown detector {self.kind!r}; expected one of {KINDS}")
        if not 0 < self.grubbs_alpha < 1:
            raise ConfigurationError("grubbs_alpha must lie in (0, 1)")
        if self.lof_k < 1:
            raise ConfigurationError("lof_k must be >= 1")
        if self.lof_threshold <= 0:
            raise ConfigurationError("lof_threshold must be > 0")
        if self.hist_freq_coeff <= 0:
            raise ConfigurationError("hist_freq_coeff must be > 0")
        if self.min_population is not None and self.min_population < 1:
            raise ConfigurationError("min_population must be >= 1")

    @property
    def effective_min_population(self) -> int:
        if self.min_population is not None:
            return self.min_population
        if self.kind == LOF:
            return max(3, self.lof_k + 1)
        if self.kind == ALWAYS:
            return 1
        return 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["min_population"] = self.effective_min_population
        return d


@dataclass(frozen=True)
class Verdict:
    is_outlier: bool
    score: float


NOT_OUTLIER = Verdict(False, 0.0)


@lru_cache(maxsize=4096)
def grubbs_critical_value(n: int, alpha: float) -> float:
    """Two-sided Grubbs critical value for sample size ``n``."""
    if n < 3:
        raise ValueError("Grubbs' test needs at least 3 values")
    tcrit = stats.t.isf(alpha / (2 * n), n - 2)
    return (n - 1) / math.sqrt(n) * math.sqrt(tcrit**2 / (n - 2 + tcrit**2))


def grubbs_statistic(values, target: float) -> float:
    """``|target - mean| / s`` with the sample standard deviation; 0 if s = 0."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    s = x.std(ddof=1)
    if s == 0 or not np.isfinite(s):
        return 0.0
    return float(abs(target - x.mean()) / s)


def _grubbs_flags(x: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    mean = x.mean()
    s = x.std(ddof=1)
    n = len(x)
    if s == 0:
        return np.zeros(n, dtype=bool), 0.0
    dev = np.abs(x - mean)
    g = float(dev.max() / s)
    if g <= grubbs_critical_value(n, alpha):
        return np.zeros(n, dtype=bool), g
    return dev == dev.max(), g


def _distinct(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct values, counts and inverse map of a sorted array."""
    n = len(x)
    start = np.empty(n, dtype=bool)
    start[0] = True
    np.not_equal(x[1:], x[:-1], out=start[1:])
    first = np.flatnonzero(start)
    counts = np.diff(np.append(first, n))
    return x[first], counts, np.cumsum(start) - 1


def _sorted(values) -> tuple[np.ndarray, np.ndarray | None]:
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 2 or not (x[1:] < x[:-1]).any():
        return x, None
    order = np.argsort(x, kind="stable")
    return x[order], order


def _lof_distinct(u: np.ndarray, cnt: np.ndarray, k: int) -> np.ndarray:
    """LOF of each distinct value ``u`` (sorted) with multiplicities ``cnt``."""
    nu = len(u)
    w = k + 1
    offs = np.concatenate([np.arange(-w, 0), np.arange(1, w + 1)])
    nb = np.arange(nu)[:, None] + offs
    valid = (nb >= 0) & (nb < nu)
    nbc = np.clip(nb, 0, nu - 1)
    d = np.where(valid, np.abs(u[nbc] - u[:, None]), np.inf)
    c = np.where(valid, cnt[nbc], 0)
    dups = cnt - 1

    # k-distance: smallest d whose cumulative count (after own duplicates) reaches k.
    order = np.argsort(d, axis=1, kind="stable")
    d_sorted = np.take_along_axis(d, order, axis=1)
    cum = np.cumsum(np.take_along_axis(c, order, axis=1), axis=1)
    need = k - dups
    first = np.argmax(cum >= np.maximum(need, 1)[:, None], axis=1)
    kdist = np.where(need <= 0, 0.0, d_sorted[np.arange(nu), first])

    member = d <= kdist[:, None]
    size = dups + np.where(member, c, 0).sum(axis=1)
    reach = np.where(member, np.maximum(kdist[nbc], d), 0.0)
    reach_sum = dups * kdist + (c * reach).sum(axis=1)
    lrd = 1.0 / (reach_sum / size + _LRD_FLOOR)
    lrd_sum = dups * lrd + np.where(member, c * lrd[nbc], 0.0).sum(axis=1)
    return lrd_sum / size / lrd


def lof_scores(values, k: int) -> np.ndarray:
    """Local outlier factor of every value, 1-D absolute distance.

    All points tied with the k-th nearest neighbour belong to the
    neighbourhood. Works on distinct values with multiplicities, so a window
    of k+1 distinct values per side always holds the whole neighbourhood.
    Returned scores are in the input order.
    """
    x, order = _sorted(values)
    n = len(x)
    if n < k + 1:
        raise ValueError(f"LOF with k={k} needs at least {k + 1} values, got {n}")
    u, cnt, inverse = _distinct(x)
    scores = _lof_distinct(u, cnt, k)[inverse]
    if order is None:
        return scores
    out = np.empty(n)
    out[order] = scores
    return out


def lof_score(values, target: float, k: int) -> float:
    """LOF of one member, computed on the slice of distinct values it depends on."""
    x, _ = _sorted(values)
    if len(x) < k + 1:
        raise ValueError(f"LOF with k={k} needs at least {k + 1} values, got {len(x)}")
    u, cnt, _ = _distinct(x)
    a = int(np.searchsorted(u, target))
    if a >= len(u) or u[a] != target:
        raise ValueError("target value is not among the values")
    # target <- its neighbours <- their k-distances <- their windows: 3(k+1) per side
    reach = 3 * (k + 1) + 1
    lo, hi = max(0, a - reach), min(len(u), a + reach + 1)
    return float(_lof_distinct(u[lo:hi], cnt[lo:hi], k)[a - lo])


def _histogram_bins(x: np.ndarray) -> tuple[np.ndarray, int]:
    n = len(x)
    nbins = max(1, int(math.floor(math.sqrt(n) + 0.5)))
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(n, dtype=np.int64), 1
    b = np.floor((x - lo) / (hi - lo) * nbins).astype(np.int64)
    return np.minimum(b, nbins - 1), nbins


def histogram_counts(values) -> tuple[np.ndarray, np.ndarray]:
    """Bin index of every value and the count of every bin."""
    x = np.asarray(values, dtype=np.float64)
    b, nbins = _histogram_bins(x)
    return b, np.bincount(b, minlength=nbins)


def histogram_verdict(values, target: float, coeff: float) -> Verdict:
    """Equal-width ``round(sqrt(N))`` bins over [min, max]; rare bins are outliers."""
    x = np.asarray(values, dtype=np.float64)
    hits = np.flatnonzero(x == target)
    if len(x) < 2 or not len(hits) or x.min() == x.max():
        return NOT_OUTLIER
    b, counts = histogram_counts(x)
    count = counts[b[hits[0]]]
    return Verdict(bool(count < coeff * len(x)), float(count))


def verdict_for_value(values: np.ndarray, target: float, spec: DetectorSpec) -> Verdict:
    """Verdict for a member with metric ``target`` of a population with ``values``."""
    n = len(values)
    if n < spec.effective_min_population or n == 0:
        return NOT_OUTLIER
    if spec.kind == ALWAYS:
        return Verdict(True, float(n))
    if spec.kind == GRUBBS:
        flags, _ = _grubbs_flags(values, spec.grubbs_alpha)
        g = grubbs_statistic(values, target)
        hit = np.flatnonzero(values == target)
        return Verdict(bool(len(hit) and flags[hit[0]]), g)
    if spec.kind == LOF:
        if n < spec.lof_k + 1:
            return NOT_OUTLIER
        score = lof_score(values, target, spec.lof_k)
        return Verdict(score > spec.lof_threshold, score)
    return histogram_verdict(values, target, spec.hist_freq_coeff)


def _bin_of(value: float, lo: float, hi: float, nbins: int) -> int:
    # Same arithmetic as _histogram_bins, one value at a time.
    return min(int(np.floor((value - lo) / (hi - lo) * nbins)), nbins - 1)


def _first_at_least(xs: np.ndarray, lo_i: int, hi_i: int, key, goal: int) -> int:
    """First index in [lo_i, hi_i) with key(xs[i]) >= goal; key is monotone."""
    while lo_i < hi_i:
        mid = (lo_i + hi_i) // 2
        if key(xs[mid]) < goal:
            lo_i = mid + 1
        else:
            hi_i = mid
    return lo_i


def _local_values(xs: np.ndarray, members: np.ndarray, target: float, need: int) -> np.ndarray:
    """Member values around ``target`` with ``need`` distinct values per side, or a boundary."""
    n_all = len(xs)
    left = int(np.searchsorted(xs, target, side="left"))
    right = int(np.searchsorted(xs, target, side="right"))
    width = 4 * need
    while True:
        lo, hi = max(0, left - width), min(n_all, right + width)
        window = xs[lo:hi][members[lo:hi]]
        below = window[window < target]
        above = window[window > target]
        ok_lo = lo == 0 or len(below) and np.count_nonzero(np.diff(below)) + 1 >= need
        ok_hi = hi == n_all or len(above) and np.count_nonzero(np.diff(above)) + 1 >= need
        if ok_lo and ok_hi:
            return window
        width *= 2


def verdict_sorted(
    xs: np.ndarray, members: np.ndarray, target: float, spec: DetectorSpec
) -> Verdict:
    """``verdict_for_value`` for the population ``xs[members]`` without extracting it.

    ``xs`` must be sorted ascending and ``target`` one of the member values.
    Only LOF's neighbourhood or the histogram's edge bins are touched, which
    keeps this cheap when the population is large.
    """
    n = int(np.count_nonzero(members))
    if n < spec.effective_min_population or n == 0:
        return NOT_OUTLIER
    if spec.kind == ALWAYS:
        return Verdict(True, float(n))
    if spec.kind == LOF:
        if n < spec.lof_k + 1:
            return NOT_OUTLIER
        local = _local_values(xs, members, target, 3 * (spec.lof_k + 1) + 1)
        score = lof_score(local, target, spec.lof_k)
        return Verdict(score > spec.lof_threshold, score)
    first = int(np.argmax(members))
    last = len(members) - 1 - int(np.argmax(members[::-1]))
    lo, hi = float(xs[first]), float(xs[last])
    if spec.kind == GRUBBS:
        if n < 2:
            return NOT_OUTLIER
        w = members.astype(np.float64)
        mean = float(xs @ w) / n
        s = math.sqrt(float(((xs - mean) ** 2) @ w) / (n - 1))
        if s == 0:
            return Verdict(False, 0.0)
        dev = abs(target - mean)
        top = max(mean - lo, hi - mean)
        g = top / s
        flagged = g > grubbs_critical_value(n, spec.grubbs_alpha) and dev == top
        return Verdict(bool(flagged), dev / s)
    if n < 2 or lo == hi:
        return NOT_OUTLIER
    nbins = max(1, int(math.floor(math.sqrt(n) + 0.5)))
    b = _bin_of(target, lo, hi, nbins)

    def key(v):
        return _bin_of(v, lo, hi, nbins)

    start = _first_at_least(xs, first, last + 1, key, b)
    stop = _first_at_least(xs, start, last + 1, key, b + 1)
    count = int(np.count_nonzero(members[start:stop]))
    return Verdict(bool(count < spec.hist_freq_coeff * n), float(count))


def verify(population: Population, target: Record, spec: DetectorSpec) -> Verdict:
    """Is ``target`` an outlier of ``population`` w.r.t. the metric?"""
    hit = np.flatnonzero(population.member_ids == target.id)
    if not len(hit):
        return NOT_OUTLIER
    values = population.metric_values
    return verdict_for_value(values, float(values[hit[0]]), spec)


def outlier_mask(values, spec: DetectorSpec) -> np.ndarray:
    """Outlier flag of every member of a population, in input order."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    none = np.zeros(n, dtype=bool)
    if n == 0 or n < spec.effective_min_population:
        return none
    if spec.kind == ALWAYS:
        return np.ones(n, dtype=bool)
    if spec.kind == GRUBBS:
        return _grubbs_flags(x, spec.grubbs_alpha)[0]
    if spec.kind == LOF:
        if n < spec.lof_k + 1:
            return none
        return lof_scores(x, spec.lof_k) > spec.lof_threshold
    if n < 2 or x.min() == x.max():
        return none
    b, counts = histogram_counts(x)
    return counts[b] < spec.hist_freq_coeff * n
