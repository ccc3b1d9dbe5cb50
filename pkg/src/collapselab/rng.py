"""Deterministic, splittable random streams.

Every stochastic draw in the package comes from a counter-based generator
keyed by a tuple of integers (seed, iteration, purpose tag, prompt, sample,
...).  Streams for distinct keys are statistically independent, and the
value of any draw depends only on its key and its position within the
stream -- never on scheduling order.  Within a trajectory stream, draws
occur in a fixed (turn, position) order, so the Philox counter position
encodes the (turn, position) coordinate of each categorical draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Purpose tags keep sibling streams (rollout vs. scoring vs. eval ...) for
# the same (seed, iteration) disjoint.
ROLLOUT = 1
SCORE_TURNS = 2
TIE_BREAK = 3
FILTER_TIES = 4
EVAL = 5
AUDIT = 6
INIT = 7


@dataclass(frozen=True)
class StreamKey:
    """Hierarchical key addressing one random stream."""

    parts: tuple[int, ...]

    def child(self, *more: int) -> "StreamKey":
        return StreamKey(self.parts + tuple(int(m) for m in more))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this key; same key -> same draw sequence."""
        return np.random.Generator(np.random.Philox(key=_fold(self.parts)))


def root_key(seed: int, *parts: int) -> StreamKey:
    return StreamKey((int(seed),) + tuple(int(p) for p in parts))


def _fold(parts: tuple[int, ...]) -> np.ndarray:
    # SeedSequence hashes the full tuple into a well-mixed 128-bit Philox key;
    # this is what makes sibling streams independent even for adjacent keys.
    ss = np.random.SeedSequence([p & 0xFFFFFFFFFFFFFFFF for p in parts])
    return ss.generate_state(2, np.uint64)
