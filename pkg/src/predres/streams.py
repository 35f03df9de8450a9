"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is a
hash of ``(seed, replicate)`` and whose counter starts at a block reserved for
``step``.  The mapping is a pure function of its inputs, so a replicate's
output never depends on how many other replicates ran before it, or on which
thread ran it.
"""

from __future__ import annotations

import numpy as np

_U64 = (1 << 64) - 1


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > _U64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def rng_substream(seed: int, replicate: int = 0, step: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, replicate, step)``.

    The Philox key is derived from ``(seed, replicate)`` through
    :class:`numpy.random.SeedSequence`; ``step`` selects a disjoint counter
    block of length 2**64, so streams for different steps of one replicate
    never overlap.
    """
    seed = _check_seed(seed)
    if replicate < 0 or step < 0:
        raise ValueError("replicate and step must be nonnegative")
    key = np.random.SeedSequence([seed, int(replicate)]).generate_state(2, dtype=np.uint64)
    counter = np.array([0, int(step), 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def as_generator(rng) -> np.random.Generator:
    """Coerce ``None``, an integer seed or a Generator to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return rng_substream(int(rng))
