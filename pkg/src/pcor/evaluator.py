"""Memoised utility evaluation of contexts for one (dataset, target) pair.

Samplers call ``utility`` for every context they inspect. Records are held
sorted by metric, so detectors can work on a membership mask over the sorted
values instead of extracting each population.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from pcor.dataset import Context, Dataset, Record, record_mask
from pcor.detectors import DetectorSpec, verdict_sorted
from pcor.errors import ConfigurationError, PreconditionError
from pcor.utility import NEG_INFINITY, OVERLAP, UtilitySpec, UtilityValue


class ContextEvaluator:
    """Utility oracle over integer context values.

    ``evaluations`` counts distinct contexts actually filtered and tested.
    """

    def __init__(
        self,
        dataset: Dataset,
        target: Record,
        detector: DetectorSpec,
        utility: UtilitySpec,
    ):
        if not dataset.has_record(target.id):
            raise PreconditionError(f"target {target.id} is not in the dataset")
        self.dataset = dataset
        self.target = target
        self.detector = detector
        self.utility_spec = utility
        self.t = dataset.schema.t
        self.m = dataset.schema.m
        order = np.argsort(dataset.metric, kind="stable")
        self._masks = dataset.record_masks[order]
        self._metric = dataset.metric[order]
        self._target_mask = record_mask(target, dataset.schema)
        self._target_metric = float(target.metric)
        self._start = None
        if utility.kind == OVERLAP:
            if utility.starting_context is None:
                raise ConfigurationError("overlap utility needs a starting context")
            self._start = self._members(utility.starting_context.value)
        self._cache: dict[int, UtilityValue] = {}
        self.evaluations = 0

    def _members(self, value: int) -> np.ndarray:
        return np.bitwise_count(self._masks & np.int64(value)) == self.m

    def contains_target(self, value: int) -> bool:
        return value & self._target_mask == self._target_mask

    def utility(self, value: int) -> UtilityValue:
        try:
            return self._cache[value]
        except KeyError:
            pass
        self.evaluations += 1
        u = NEG_INFINITY
        if self.contains_target(value):
            members = self._members(value)
            if verdict_sorted(self._metric, members, self._target_metric, self.detector).is_outlier:
                if self._start is None:
                    u = float(np.count_nonzero(members))
                else:
                    u = float(np.count_nonzero(members & self._start))
        self._cache[value] = u
        return u

    def matches(self, value: int) -> bool:
        return self.utility(value) is not NEG_INFINITY

    def context(self, value: int) -> Context:
        return Context(value, self.t)

    @property
    def target_mask(self) -> int:
        return self._target_mask

    def candidates(self) -> Iterator[int]:
        """Every context containing the target, ascending; the rest never match."""
        free = ((1 << self.t) - 1) & ~self._target_mask
        sub = 0
        while True:
            yield self._target_mask | sub
            if sub == free:
                return
            sub = (sub - free) & free

    def matching_utilities(self) -> dict[int, float]:
        """Utility of every matching context, keyed by context value."""
        out = {}
        for v in self.candidates():
            u = self.utility(v)
            if u is not NEG_INFINITY:
                out[v] = u
        return out

    def count_matches(self, at_least: int | None = None) -> int:
        """Number of matching contexts, stopping early once ``at_least`` is reached."""
        found = 0
        for v in self.candidates():
            if self.matches(v):
                found += 1
                if at_least is not None and found >= at_least:
                    break
        return found
