"""Deterministic per-entity random streams.

Every stochastic component (topology, each gNB's channel row, each gNB's
traffic, each agent's policy/update noise, ...) owns a private generator
derived from ``(seed, domain, index)``. Streams are independent of call
order across entities, so per-gNB work can be reordered or parallelized
without changing any draw.
"""

from __future__ import annotations

import numpy as np

# Domain tags; part of the on-disk reproducibility contract, do not renumber.
TOPOLOGY = 0
CHANNEL = 1
TRAFFIC = 2
POLICY = 3
NET_INIT = 4
UPDATE = 5
BASELINE = 6
EVAL = 7


def stream(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Generator for one entity, keyed by (seed, domain, index)."""
    return np.random.default_rng(np.random.SeedSequence((seed, domain, index)))
