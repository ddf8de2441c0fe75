"""Utility scores of candidate contexts; both shipped utilities have sensitivity 1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcor.dataset import Context, Dataset, Record, filter_population, membership_mask
from pcor.detectors import DetectorSpec, verify
from pcor.errors import ConfigurationError

POPSIZE = "popsize"
OVERLAP = "overlap"
KINDS = (POPSIZE, OVERLAP)

SENSITIVITY = 1.0


class _NegInfinity:
    """Utility of a non-matching context; never selectable."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NEG_INFINITY"

    def __reduce__(self):
        return (_NegInfinity, ())

    def __lt__(self, other):
        return other is not self

    def __gt__(self, other):
        return False


NEG_INFINITY = _NegInfinity()
UtilityValue = float | _NegInfinity


def is_finite(u: UtilityValue) -> bool:
    return u is not NEG_INFINITY


@dataclass(frozen=True)
class UtilitySpec:
    kind: str = POPSIZE
    starting_context: Context | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown utility {self.kind!r}; expected one of {KINDS}")

    def with_start(self, starting: Context) -> UtilitySpec:
        if self.kind != OVERLAP or self.starting_context is not None:
            return self
        return UtilitySpec(OVERLAP, starting)


def population_size_utility(
    dataset: Dataset, context: Context, target: Record, detector: DetectorSpec
) -> UtilityValue:
    """``|D_C|`` for a matching context, NEG_INFINITY otherwise."""
    pop = filter_population(dataset, context)
    if not verify(pop, target, detector).is_outlier:
        return NEG_INFINITY
    return float(len(pop))


def overlap_utility(
    dataset: Dataset,
    context: Context,
    target: Record,
    detector: DetectorSpec,
    starting: Context,
) -> UtilityValue:
    """``|D_C ∩ D_start|`` (by record) for a matching context, NEG_INFINITY otherwise."""
    if starting.length != context.length:
        raise ConfigurationError("starting context does not match the schema width")
    pop = filter_population(dataset, context)
    if not verify(pop, target, detector).is_outlier:
        return NEG_INFINITY
    both = membership_mask(dataset, context) & membership_mask(dataset, starting)
    return float(np.count_nonzero(both))


def utility_value(
    dataset: Dataset,
    context: Context,
    target: Record,
    detector: DetectorSpec,
    spec: UtilitySpec,
) -> UtilityValue:
    if spec.kind == POPSIZE:
        return population_size_utility(dataset, context, target, detector)
    if spec.starting_context is None:
        raise ConfigurationError("overlap utility needs a starting context")
    return overlap_utility(dataset, context, target, detector, spec.starting_context)
