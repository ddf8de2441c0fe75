"""Empirical privacy checks on neighbouring datasets.

Neighbours are built by removing records. Two measurements are offered:
how well a target's set of matching contexts survives the removal (Jaccard
match), and the worst-case ratio of direct-mechanism selection probabilities
between the two datasets, computed exactly in log space.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from pcor.dataset import Dataset, Record
from pcor.detectors import DetectorSpec
from pcor.errors import PreconditionError
from pcor.evaluator import ContextEvaluator
from pcor.mechanism import log_probabilities
from pcor.samplers import DIRECT, SamplerSpec, budget_split, find_starting_context, release
from pcor.utility import OVERLAP, POPSIZE, UtilitySpec

DEFAULT_DELTAS = (1, 5, 10, 25)
MATCH_METRIC = "jaccard"

# Flags attached to individual measurements.
VACUOUS = "both-empty"
SKIPPED = "empty-in-neighbor"
EMPTY_INTERSECTION = "empty-intersection"


@dataclass(frozen=True)
class NeighborSpec:
    delta: int = 1
    trials: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.delta < 1:
            raise PreconditionError("delta must be >= 1")
        if self.trials < 1:
            raise PreconditionError("trials must be >= 1")


def make_neighbor(
    dataset: Dataset,
    delta: int,
    rng: np.random.Generator,
    *,
    protect: Iterable[int] = (),
) -> tuple[Dataset, tuple[int, ...]]:
    """Remove ``delta`` uniformly chosen records; returns the neighbour and removed ids.

    Records in ``protect`` are never removed. ``delta = 0`` returns the input.
    """
    if delta < 0:
        raise PreconditionError("delta must be >= 0")
    if delta == 0:
        return dataset, ()
    keep = set(protect)
    pool = np.array([i for i in dataset.ids.tolist() if i not in keep], dtype=np.int64)
    if delta >= len(dataset) or delta > len(pool):
        raise PreconditionError(
            f"cannot remove {delta} records from {len(dataset)} ({len(pool)} removable)"
        )
    removed = tuple(sorted(rng.choice(pool, size=delta, replace=False).tolist()))
    return dataset.without(removed), removed


def coe_utilities(
    dataset: Dataset, target: Record, detector: DetectorSpec, utility: UtilitySpec | None = None
) -> dict[int, float]:
    """Matching contexts (as integers) of ``target`` with their utilities."""
    if utility is None:
        utility = UtilitySpec(POPSIZE)
    return ContextEvaluator(dataset, target, detector, utility).matching_utilities()


def coe_values(dataset: Dataset, target: Record, detector: DetectorSpec) -> frozenset[int]:
    return frozenset(coe_utilities(dataset, target, detector))


def jaccard_percent(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 100.0
    return 100.0 * len(a & b) / len(union)


@dataclass(frozen=True)
class Match:
    percent: float
    flag: str = ""


def coe_match(dataset: Dataset, neighbor: Dataset, target: Record, detector: DetectorSpec) -> Match:
    """Jaccard overlap (percent) of the target's COE in both datasets."""
    for d in (dataset, neighbor):
        if not d.has_record(target.id):
            raise PreconditionError(f"target {target.id} missing from a dataset")
    a = coe_values(dataset, target, detector)
    b = a if neighbor is dataset else coe_values(neighbor, target, detector)
    return Match(jaccard_percent(a, b), VACUOUS if not (a or b) else "")


@dataclass(frozen=True)
class MatchRow:
    detector: str
    delta: int
    mean_match: float
    pairs: int
    vacuous: int
    skipped: int


@dataclass(frozen=True)
class MatchReport:
    rows: tuple[MatchRow, ...]
    metric: str = MATCH_METRIC

    def mean(self, detector: str, delta: int) -> float:
        for r in self.rows:
            if r.detector == detector and r.delta == delta:
                return r.mean_match
        raise KeyError((detector, delta))


def _match_trial(args) -> list[tuple[float, str]]:
    dataset, targets, detector, delta, seed_seq, originals = args
    rng = np.random.default_rng(seed_seq)
    neighbor, _ = make_neighbor(dataset, delta, rng, protect=[t.id for t in targets])
    out = []
    for target, before in zip(targets, originals):
        after = coe_values(neighbor, target, detector)
        if before and not after:
            out.append((math.nan, SKIPPED))
        else:
            out.append((jaccard_percent(before, after), "" if before or after else VACUOUS))
    return out


def coe_match_study(
    dataset: Dataset,
    targets: Sequence[Record],
    detectors: Sequence[DetectorSpec],
    deltas: Sequence[int] = DEFAULT_DELTAS,
    trials: int = 50,
    seed: int = 0,
    workers: int = 1,
) -> MatchReport:
    """Mean COE match per (detector, delta) over targets and random neighbours.

    Pairs where the target stops being an outlier everywhere in the
    neighbour are skipped and counted, not averaged in.
    """
    root = np.random.SeedSequence(seed)
    jobs, keys = [], []
    for detector in detectors:
        originals = [coe_values(dataset, t, detector) for t in targets]
        for delta, delta_seq in zip(deltas, root.spawn(len(deltas))):
            for trial_seq in delta_seq.spawn(trials):
                jobs.append((dataset, list(targets), detector, delta, trial_seq, originals))
                keys.append((detector.kind, delta))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_match_trial, jobs))
    else:
        results = [_match_trial(j) for j in jobs]
    grouped: dict[tuple[str, int], list[tuple[float, str]]] = {}
    for key, res in zip(keys, results):
        grouped.setdefault(key, []).extend(res)
    rows = []
    for (kind, delta), items in grouped.items():
        kept = [p for p, flag in items if flag != SKIPPED]
        flags = Counter(flag for _, flag in items)
        mean = float(np.mean(kept)) if kept else math.nan
        rows.append(MatchRow(kind, delta, mean, len(kept), flags[VACUOUS], flags[SKIPPED]))
    return MatchReport(tuple(rows))


@dataclass(frozen=True)
class RatioReport:
    """Worst selection-probability ratio for one (target, neighbour) pair.

    ``max_ratio`` takes both directions, so it is always >= 1 when defined.
    """

    target_id: int
    max_ratio: float
    bound: float
    contexts: int
    equal_coe: bool
    flag: str = ""
    estimate: bool = False
    replications: int = 0

    @property
    def passed(self) -> bool:
        return self.flag != EMPTY_INTERSECTION and self.max_ratio <= self.bound


def _log_ratio(a: dict[int, float], b: dict[int, float], epsilon1: float) -> tuple[float, int]:
    keys_a, keys_b = list(a), list(b)
    la = dict(zip(keys_a, log_probabilities([a[k] for k in keys_a], epsilon1)))
    lb = dict(zip(keys_b, log_probabilities([b[k] for k in keys_b], epsilon1)))
    common = a.keys() & b.keys()
    if not common:
        return math.nan, 0
    return max(abs(la[c] - lb[c]) for c in common), len(common)


def probability_ratio_audit(
    dataset: Dataset,
    neighbor: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    *,
    slack: float = 0.0,
) -> RatioReport:
    """Exact direct-mechanism ratio over contexts matching in both datasets.

    Each side uses its own full COE for normalisation with epsilon1 = epsilon/2.
    """
    a = coe_utilities(dataset, target, detector, utility)
    b = a if neighbor is dataset else coe_utilities(neighbor, target, detector, utility)
    return ratio_report(target.id, a, b, epsilon, slack)


def ratio_report(
    target_id: int, a: dict[int, float], b: dict[int, float], epsilon: float, slack: float = 0.0
) -> RatioReport:
    """Ratio report from two precomputed COE utility maps (context value -> utility)."""
    eps1 = budget_split(DIRECT, 1, epsilon)
    bound = math.exp(epsilon) + slack
    log_ratio, common = _log_ratio(a, b, eps1)
    equal = a.keys() == b.keys()
    if not common:
        return RatioReport(target_id, math.nan, bound, 0, equal, EMPTY_INTERSECTION)
    return RatioReport(target_id, math.exp(log_ratio), bound, common, equal)


def estimated_ratio_audit(
    dataset: Dataset,
    neighbor: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    sampler: SamplerSpec,
    replications: int,
    seed: int = 0,
) -> RatioReport:
    """Monte Carlo ratio of released-context frequencies for any sampler.

    Only contexts released at least once on both sides are compared, so the
    figure is a noisy lower view of the true worst case.
    """
    counts = []
    for d in (dataset, neighbor):
        tgt = d.record(target.id)
        ev = ContextEvaluator(d, tgt, detector, utility)
        seqs = np.random.SeedSequence(seed).spawn(replications)
        c = Counter(
            release(d, tgt, detector, utility, sampler, np.random.default_rng(s),
                    evaluator=ev).private_context.value
            for s in seqs
        )
        counts.append(c)
    common = counts[0].keys() & counts[1].keys()
    bound = math.exp(sampler.total_epsilon)
    if not common:
        return RatioReport(target.id, math.nan, bound, 0, False, EMPTY_INTERSECTION,
                           estimate=True, replications=replications)
    worst = max(max(counts[0][c] / counts[1][c], counts[1][c] / counts[0][c]) for c in common)
    return RatioReport(target.id, float(worst), bound, len(common), False, "",
                       estimate=True, replications=replications)


@dataclass(frozen=True)
class AuditSummary:
    reports: tuple[RatioReport, ...] = field(default=())

    def fraction_within(self, equal_coe: bool) -> float:
        pool = [r for r in self.reports if r.equal_coe == equal_coe and r.flag != EMPTY_INTERSECTION]
        if not pool:
            return math.nan
        return sum(r.passed for r in pool) / len(pool)

    def count(self, equal_coe: bool) -> int:
        return sum(1 for r in self.reports if r.equal_coe == equal_coe and not r.flag)

    @property
    def flagged(self) -> int:
        return sum(1 for r in self.reports if r.flag)


def ratio_study(
    dataset: Dataset,
    targets: Sequence[Record],
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    *,
    delta: int = 1,
    trials: int = 1,
    seed: int = 0,
) -> AuditSummary:
    """Ratio audit over every (target, random neighbour) pair.

    An overlap utility without a starting context gets one per target.
    """
    setup_seq, trial_seq = np.random.SeedSequence(seed).spawn(2)
    setup_rng = np.random.default_rng(setup_seq)
    utilities = [
        utility.with_start(find_starting_context(dataset, t, detector, setup_rng))
        if utility.kind == OVERLAP and utility.starting_context is None else utility
        for t in targets
    ]
    originals = [coe_utilities(dataset, t, detector, u) for t, u in zip(targets, utilities)]
    reports = []
    for seq in trial_seq.spawn(trials):
        rng = np.random.default_rng(seq)
        neighbor, _ = make_neighbor(dataset, delta, rng, protect=[t.id for t in targets])
        for target, a, u in zip(targets, originals, utilities):
            b = coe_utilities(neighbor, target, detector, u)
            reports.append(ratio_report(target.id, a, b, epsilon))
    return AuditSummary(tuple(reports))
