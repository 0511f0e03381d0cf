"""Deterministic, splittable random streams.

Every stochastic component draws from its own named stream derived from
the master seed, so adding a consumer never perturbs the others and any
(seed, stream, step) triple reproduces bit-identically across processes
and platforms.
"""

import numpy as np

# Stream tags. Fixed small integers, never reused for a second purpose.
STREAM_INIT = 0
STREAM_RESERVED = 1
STREAM_BATCH = 2
STREAM_NEGATIVES = 3
STREAM_FROZEN = 4
STREAM_NEIGHBOR_CAP = 5


def stream(seed: int, tag: int, *steps: int) -> np.random.Generator:
    """Return a fresh generator for the given (seed, tag, steps...) key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag),) + tuple(int(s) for s in steps))
    return np.random.Generator(np.random.PCG64(ss))


def frozen_entity_vector(seed: int, entity: int, dim: int) -> np.ndarray:
    """Per-entity pseudorandom vector, stable across processes.

    Used when both relation-based and neighbor-based input encodings are
    disabled: entities then enter the message-passing stage with fixed,
    non-trainable vectors.
    """
    g = stream(seed, STREAM_FROZEN, entity)
    return g.uniform(-0.5, 0.5, size=dim)


def frozen_entity_matrix(seed: int, n_entities: int, dim: int) -> np.ndarray:
    """Stack of `frozen_entity_vector` rows for all entities."""
    out = np.empty((n_entities, dim), dtype=np.float64)
    for e in range(n_entities):
        out[e] = frozen_entity_vector(seed, e, dim)
    return out
