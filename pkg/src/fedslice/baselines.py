"""Non-learning allocation policies sharing the Action interface."""

from __future__ import annotations

import enum

import numpy as np

from fedslice.config import N_SLICES
from fedslice.env import clip_to_simplex


class BaselineKind(enum.Enum):
    EQUAL_SLICING = "equal"
    QUEUE_PROPORTIONAL = "queueprop"
    RANDOM_DIRICHLET = "random"


def equal_slicing() -> np.ndarray:
    """Static even split, regardless of traffic state."""
    return clip_to_simplex(np.full(N_SLICES, 1.0 / N_SLICES))


def queue_proportional(queue_lengths) -> np.ndarray:
    """Fractions proportional to instantaneous queue lengths.

    All-empty queues fall back to the even split.
    """
    q = np.asarray(queue_lengths, dtype=float)
    if q.shape != (N_SLICES,) or np.any(q < 0):
        raise ValueError("queue lengths must be 3 nonnegative values")
    total = q.sum()
    if total <= 0:
        return equal_slicing()
    return clip_to_simplex(q / total)


def random_dirichlet(rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the simplex (symmetric Dirichlet, concentration 1)."""
    return clip_to_simplex(rng.dirichlet(np.ones(N_SLICES)))


def make_policy(kind: BaselineKind):
    """Callable(queue_lengths, rng) -> action for the requested baseline."""
    if kind is BaselineKind.EQUAL_SLICING:
        return lambda queues, rng: equal_slicing()
    if kind is BaselineKind.QUEUE_PROPORTIONAL:
        return lambda queues, rng: queue_proportional(queues)
    if kind is BaselineKind.RANDOM_DIRICHLET:
        return lambda queues, rng: random_dirichlet(rng)
    raise ValueError(f"unknown baseline {kind!r}")
