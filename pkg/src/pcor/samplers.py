"""Private release of one matching context for a target record.

Five release algorithms share one shape: collect a set of matching contexts
(exhaustively, by uniform sampling, or by searching the context graph), then
spend one final exponential-mechanism draw to pick the released context. The
graph searches (``dfs``/``bfs``) also spend a draw per step.

Contexts are handled as plain integers internally and wrapped in ``Context``
only in results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pcor.dataset import Context, Dataset, Record
from pcor.detectors import DetectorSpec
from pcor.errors import (
    ConfigurationError,
    NoStartingContextError,
    NoValidContextError,
    PreconditionError,
    SamplingExhaustedError,
)
from pcor.evaluator import ContextEvaluator
from pcor.mechanism import draw_index, utility_probabilities
from pcor.utility import NEG_INFINITY, POPSIZE, UtilitySpec

DIRECT = "direct"
UNIFORM = "uniform"
RWALK = "rwalk"
DFS = "dfs"
BFS = "bfs"
KINDS = (DIRECT, UNIFORM, RWALK, DFS, BFS)
GRAPH_KINDS = (RWALK, DFS, BFS)

DEFAULT_MAX_ATTEMPTS = 10**7
_UNIFORM_BATCH = 4096


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = BFS
    n: int = 50
    total_epsilon: float = 0.2
    starting_context: Context | None = None
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown sampler {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if not self.total_epsilon > 0:
            raise ConfigurationError("total epsilon must be > 0")
        if self.max_attempts < 1:
            raise ConfigurationError("max_attempts must be >= 1")


@dataclass(frozen=True)
class SampleSet:
    contexts: tuple[Context, ...]
    provenance: str


@dataclass(frozen=True)
class ReleaseResult:
    private_context: Context
    private_utility: float
    sample_set: SampleSet
    epsilon1_used: float
    mechanism_invocations: int
    expansions: int
    attempts: int = 0
    wall_time: float = field(default=0.0, compare=False)


def budget_split(kind: str, n: int, total_epsilon: float) -> float:
    """Per-draw epsilon1 so that the whole release costs ``total_epsilon``.

    Single-draw algorithms cost 2*eps1; the graph searches make n+1 draws.
    """
    if not total_epsilon > 0:
        raise ConfigurationError(f"total epsilon must be > 0, got {total_epsilon}")
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    if kind in (DIRECT, UNIFORM, RWALK):
        return total_epsilon / 2
    if kind in (DFS, BFS):
        return total_epsilon / (2 * n + 2)
    raise ConfigurationError(f"unknown sampler {kind!r}")


class _Run:
    """Bookkeeping shared by one release: evaluator, rng, draw counter."""

    def __init__(self, evaluator: ContextEvaluator, epsilon1: float, rng: np.random.Generator):
        self.ev = evaluator
        self.eps1 = epsilon1
        self.rng = rng
        self.invocations = 0
        self.expansions = 0
        self.started = time.perf_counter()
        t = evaluator.t
        self.flips = [1 << (t - 1 - i) for i in range(t)]

    def select(self, values: Sequence[int]) -> int:
        """One exponential-mechanism draw; returns the position in ``values``."""
        self.invocations += 1
        p = utility_probabilities([self.ev.utility(v) for v in values], self.eps1)
        return draw_index(p, self.rng)

    def matching_neighbours(self, value: int) -> list[int]:
        self.expansions += len(self.flips)
        return [value ^ f for f in self.flips if self.ev.matches(value ^ f)]

    def finish(self, pool: Sequence[int], kind: str, attempts: int = 0) -> ReleaseResult:
        i = self.select(pool)
        chosen = pool[i]
        ev = self.ev
        return ReleaseResult(
            private_context=ev.context(chosen),
            private_utility=float(ev.utility(chosen)),
            sample_set=SampleSet(tuple(ev.context(v) for v in pool), kind),
            epsilon1_used=self.eps1,
            mechanism_invocations=self.invocations,
            expansions=self.expansions,
            attempts=attempts,
            wall_time=time.perf_counter() - self.started,
        )


def _evaluator(dataset, target, detector, utility, evaluator) -> ContextEvaluator:
    if evaluator is not None:
        if evaluator.target.id != target.id or evaluator.dataset is not dataset:
            raise PreconditionError("evaluator was built for a different dataset or target")
        return evaluator
    return ContextEvaluator(dataset, target, detector, utility)


def _check_start(ev: ContextEvaluator, starting: Context | None) -> int:
    if starting is None:
        raise PreconditionError("a starting context is required for graph samplers")
    if starting.length != ev.t:
        raise PreconditionError("starting context does not match the schema width")
    v = starting.value
    if not ev.matches(v):
        raise PreconditionError(f"starting context {starting} is not a matching context")
    return v


def direct_release(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    rng: np.random.Generator,
    *,
    evaluator: ContextEvaluator | None = None,
) -> ReleaseResult:
    """Enumerate all 2^t contexts, keep the matching ones, draw once."""
    ev = _evaluator(dataset, target, detector, utility, evaluator)
    run = _Run(ev, budget_split(DIRECT, 1, epsilon), rng)
    pool = [v for v in range(1 << ev.t) if ev.utility(v) is not NEG_INFINITY]
    run.expansions = 1 << ev.t
    if not pool:
        raise NoValidContextError(f"target {target.id} has no matching context")
    return run.finish(pool, DIRECT)


def uniform_release(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    n: int,
    rng: np.random.Generator,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    evaluator: ContextEvaluator | None = None,
) -> ReleaseResult:
    """Draw uniform bit vectors until n matching ones are kept (a multiset)."""
    ev = _evaluator(dataset, target, detector, utility, evaluator)
    run = _Run(ev, budget_split(UNIFORM, n, epsilon), rng)
    pool: list[int] = []
    attempts = 0
    space = 1 << ev.t
    while len(pool) < n:
        if attempts >= max_attempts:
            raise SamplingExhaustedError(len(pool), attempts, n)
        batch = rng.integers(0, space, size=min(_UNIFORM_BATCH, max_attempts - attempts))
        for v in batch.tolist():
            attempts += 1
            run.expansions += 1
            if ev.matches(v):
                pool.append(v)
                if len(pool) == n:
                    break
    return run.finish(pool, UNIFORM, attempts)


def random_walk_release(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    n: int,
    starting: Context,
    rng: np.random.Generator,
    *,
    evaluator: ContextEvaluator | None = None,
) -> ReleaseResult:
    """Walk between matching neighbours; stop at n samples or when stuck.

    Neighbours of the current context are tried in a random order without
    replacement; a context with no matching neighbour ends the walk.
    """
    ev = _evaluator(dataset, target, detector, utility, evaluator)
    run = _Run(ev, budget_split(RWALK, n, epsilon), rng)
    current = _check_start(ev, starting)
    pool = [current]
    while len(pool) < n:
        for i in rng.permutation(ev.t).tolist():
            candidate = current ^ run.flips[i]
            run.expansions += 1
            if ev.matches(candidate):
                pool.append(candidate)
                current = candidate
                break
        else:
            break
    return run.finish(pool, RWALK)


def dfs_release(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    n: int,
    starting: Context,
    rng: np.random.Generator,
    *,
    evaluator: ContextEvaluator | None = None,
) -> ReleaseResult:
    """Depth-first search whose next child is chosen by the exponential mechanism."""
    ev = _evaluator(dataset, target, detector, utility, evaluator)
    run = _Run(ev, budget_split(DFS, n, epsilon), rng)
    stack = [_check_start(ev, starting)]
    visited: dict[int, None] = {}
    while len(visited) < n and stack:
        top = stack[-1]
        visited.setdefault(top)
        children = [c for c in run.matching_neighbours(top) if c not in visited]
        if not children:
            stack.pop()
        else:
            stack.append(children[run.select(children)])
    return run.finish(list(visited), DFS)


def bfs_release(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    epsilon: float,
    n: int,
    starting: Context,
    rng: np.random.Generator,
    *,
    evaluator: ContextEvaluator | None = None,
) -> ReleaseResult:
    """Best-first search: the frontier is a priority queue served by the mechanism."""
    ev = _evaluator(dataset, target, detector, utility, evaluator)
    run = _Run(ev, budget_split(BFS, n, epsilon), rng)
    frontier = [_check_start(ev, starting)]
    queued = set(frontier)
    visited: dict[int, None] = {}
    while len(visited) < n and frontier:
        current = frontier.pop(run.select(frontier))
        queued.discard(current)
        visited[current] = None
        for c in run.matching_neighbours(current):
            if c not in visited and c not in queued:
                frontier.append(c)
                queued.add(c)
    return run.finish(list(visited), BFS)


def release(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    sampler: SamplerSpec,
    rng: np.random.Generator,
    *,
    evaluator: ContextEvaluator | None = None,
) -> ReleaseResult:
    """Dispatch on ``sampler.kind``."""
    eps, n = sampler.total_epsilon, sampler.n
    if sampler.kind == DIRECT:
        return direct_release(dataset, target, detector, utility, eps, rng, evaluator=evaluator)
    if sampler.kind == UNIFORM:
        return uniform_release(
            dataset, target, detector, utility, eps, n, rng,
            max_attempts=sampler.max_attempts, evaluator=evaluator,
        )
    fn = {RWALK: random_walk_release, DFS: dfs_release, BFS: bfs_release}[sampler.kind]
    return fn(
        dataset, target, detector, utility, eps, n, sampler.starting_context, rng,
        evaluator=evaluator,
    )


def find_starting_context(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    rng: np.random.Generator,
    *,
    max_attempts: int = 10_000,
) -> Context:
    """Some matching context for ``target``, found on the data owner's side.

    Tries the full context, then the target's own cell, then random contexts
    that contain the target. Spends no privacy budget; it is setup for the
    graph samplers.
    """
    ev = ContextEvaluator(dataset, target, detector, UtilitySpec(POPSIZE))
    tmask = ev.target_mask
    for v in ((1 << ev.t) - 1, tmask):
        if ev.matches(v):
            return ev.context(v)
    for _ in range(max_attempts):
        v = int(rng.integers(0, 1 << ev.t)) | tmask
        if ev.matches(v):
            return ev.context(v)
    raise NoStartingContextError(
        f"no matching context for target {target.id} in {max_attempts} attempts"
    )
