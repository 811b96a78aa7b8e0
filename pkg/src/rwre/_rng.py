"""Deterministic random-stream derivation shared by all simulation modules.

Every simulation entry point takes either a ``numpy.random.Generator`` or a
64-bit master seed.  Replicated experiments derive one independent child
stream per replica from ``(master_seed, replica_index)`` so that results are
a pure function of the configuration and the seed, independent of execution
order or thread count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_rng", "master_rng"]


def master_rng(seed: int) -> np.random.Generator:
    """Single stream keyed by the master seed alone."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent child stream for ``(seed, *key)``.

    The mixing function is ``numpy.random.SeedSequence`` with the replica key
    supplied as ``spawn_key``; it is stable across numpy releases and across
    platforms, which is what makes CSV outputs byte-reproducible.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
