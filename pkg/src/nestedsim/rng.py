"""Seeded random streams.

Every stream is identified by ``(seed, salt, stream_id)`` where
``stream_id = macro * 2**32 + scenario``.  The salt separates independent
experiment arms (e.g. the optimal and the standard design) that share a
master seed.  Serial and parallel runs that derive streams with the same
ids draw identical numbers.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_SCENARIO_SPAN = 2**32


def stream_id(macro: int, scenario: int) -> int:
    if macro < 0 or not 0 <= scenario < _SCENARIO_SPAN:
        raise ValueError(f"invalid stream coordinates ({macro}, {scenario})")
    return macro * _SCENARIO_SPAN + scenario


def make_stream(
    seed: int, macro: int = 0, scenario: int = 0, salt: int | Sequence[int] = 0
) -> np.random.Generator:
    """Return the generator owned by the ``(macro, scenario)`` pair."""
    sid = stream_id(macro, scenario)
    salts = [int(salt)] if np.ndim(salt) == 0 else [int(v) for v in salt]
    ss = np.random.SeedSequence(entropy=[int(seed), *salts], spawn_key=(sid,))
    return np.random.Generator(np.random.PCG64(ss))


# Fixed scenario slots for auxiliary streams so they never collide with
# per-scenario inner-replication streams (scenario indices stay < 2**31).
OUTER = 2**31 + 1
DATA = 2**31 + 2
REGRESSION = 2**31 + 3
TEST_SET = 2**31 + 4
STANDARD = 2**31 + 5
ORACLE = 2**31 + 6
