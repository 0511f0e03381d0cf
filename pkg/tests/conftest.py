import numpy as np
import pytest

from earl.kg import KnowledgeGraph


def random_kg(rng, n_entities=12, n_relations=3, n_triples=30, with_splits=False):
    """A random graph over labels e<i> / r<j>, deduplicated."""
    triples = set()
    while len(triples) < n_triples:
        h = int(rng.integers(0, n_entities))
        t = int(rng.integers(0, n_entities))
        r = int(rng.integers(0, n_relations))
        triples.add((f"e{h}", f"r{r}", f"e{t}"))
    triples = sorted(triples)
    if not with_splits:
        return KnowledgeGraph.from_triples(triples)
    cut = max(1, len(triples) // 5)
    return KnowledgeGraph.from_triples(triples[cut:], valid=(), test=triples[:cut])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
