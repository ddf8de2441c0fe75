"""The exponential mechanism over a finite candidate list.

Weights are ``exp(epsilon1 * u)`` with sensitivity 1: one draw costs
``2 * epsilon1`` of privacy budget, and callers split their total budget
accordingly (see ``pcor.samplers.budget_split``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pcor.errors import ConfigurationError, EmptyCandidatesError, NoValidCandidateError
from pcor.utility import NEG_INFINITY, SENSITIVITY, UtilityValue


@dataclass(frozen=True)
class WeightedDraw:
    chosen: object
    index: int
    probabilities: list[tuple[object, float]]


def log_probabilities(utilities: Sequence[UtilityValue], epsilon1: float) -> np.ndarray:
    """Natural-log selection probabilities; -inf for -inf-utility candidates.

    Stays exact where plain probabilities would underflow to zero.
    """
    if epsilon1 < 0:
        raise ConfigurationError(f"epsilon1 must be >= 0, got {epsilon1}")
    if len(utilities) == 0:
        raise EmptyCandidatesError("no candidates")
    finite = np.array([u is not NEG_INFINITY for u in utilities])
    if not finite.any():
        raise NoValidCandidateError("every candidate has -inf utility")
    u = np.array([float(x) if ok else 0.0 for x, ok in zip(utilities, finite)])
    logits = epsilon1 * u[finite] / SENSITIVITY
    shifted = logits - logits.max()
    out = np.full(len(u), -np.inf)
    out[finite] = shifted - np.log(np.exp(shifted).sum())
    return out


def utility_probabilities(utilities: Sequence[UtilityValue], epsilon1: float) -> np.ndarray:
    """Selection probabilities for a utility vector (max-shifted softmax)."""
    return np.exp(log_probabilities(utilities, epsilon1))


def exact_probabilities(
    candidates: Sequence[tuple[object, UtilityValue]], epsilon1: float
) -> list[float]:
    return utility_probabilities([u for _, u in candidates], epsilon1).tolist()


def draw_index(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; a uniform landing exactly on a boundary takes the lower index."""
    support = np.flatnonzero(p > 0)
    cdf = np.cumsum(p[support])
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="left"))
    return int(support[min(i, len(support) - 1)])


def exp_mechanism(
    candidates: Sequence[tuple[object, UtilityValue]],
    epsilon1: float,
    rng: np.random.Generator,
) -> WeightedDraw:
    """Draw one candidate with probability proportional to ``exp(epsilon1 * u)``.

    Duplicate candidates (a multiset) each keep their own weight.
    """
    p = utility_probabilities([u for _, u in candidates], epsilon1)
    i = draw_index(p, rng)
    return WeightedDraw(candidates[i][0], i, [(c, float(q)) for (c, _), q in zip(candidates, p)])
