"""Deterministic randomness plumbing.

Every stochastic operation in the toolkit draws from an explicitly passed
``numpy.random.Generator``; there is no hidden global state.  A crossbar
built from seed ``s`` derives one child stream per device plus one stream
for crossbar-level operations via ``SeedSequence(s).spawn``, so replaying
any operation sequence with the same seed reproduces every trajectory
bit-for-bit, and per-device draws do not depend on iteration order.
"""

from __future__ import annotations

import numpy as np

RandomStream = np.random.Generator


def stream_from_seed(seed: int) -> RandomStream:
    """One independent stream from an integer seed."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_streams(seed: int, count: int) -> list[RandomStream]:
    """``count`` independent child streams from one root seed.

    Child ``i`` is identical across calls with the same ``(seed, count>i)``,
    which is what makes device grids reproducible.
    """
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in root.spawn(count)]


def generator_state(rng: RandomStream) -> dict:
    """Serializable snapshot of a PCG64 stream."""
    return rng.bit_generator.state


def restore_generator(state: dict) -> RandomStream:
    """Rebuild a stream from a ``generator_state`` snapshot."""
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
