"""Deterministic derivation of independent random streams."""

from __future__ import annotations

import numpy as np

GROUP_KEYS = {"X": 0, "Y": 1}


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a counter-based generator keyed by ``(seed, *keys)``.

    Streams with different key tuples are statistically independent, so a
    replicate can be regenerated on its own without replaying earlier ones.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def group_key(group: str) -> int:
    try:
        return GROUP_KEYS[group]
    except KeyError:
        raise ValueError(f"group must be 'X' or 'Y', got {group!r}") from None
