"""Triple store: vocabularies, splits, and adjacency lists.

Datasets are UTF-8 TSV files, one ``head<TAB>relation<TAB>tail`` triple
per line. Vocabularies are built from the training file only, in first
occurrence order, so index assignment is deterministic without sorting.
Validation/test lines naming entities or relations absent from training
are kept aside as "unseen" raw triples; they cannot be ranked and are
only reported.
"""

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

Triple = tuple[int, int, int]


@dataclass
class Vocab:
    """Bidirectional string<->index mapping with first-occurrence order."""

    labels: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def add(self, label: str) -> int:
        i = self.index.get(label)
        if i is None:
            i = len(self.labels)
            self.index[label] = i
            self.labels.append(label)
        return i

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.index


@dataclass
class LoadResult:
    triples: list[Triple]
    unseen: list[tuple[str, str, str]]
    duplicates_dropped: int
    vocab_entities: Vocab | None = None
    vocab_relations: Vocab | None = None


class KnowledgeGraph:
    """Immutable triple store for one dataset.

    Attributes:
        entities, relations: vocabularies (training split only).
        train, valid, test: lists of (head, relation, tail) index triples.
        valid_unseen, test_unseen: raw string triples that reference
            vocabulary absent from training.
        out_adj, in_adj: per-entity lists of (relation, neighbor) pairs,
            built from train triples only.
    """

    def __init__(self):
        self.entities = Vocab()
        self.relations = Vocab()
        self.train: list[Triple] = []
        self.valid: list[Triple] = []
        self.test: list[Triple] = []
        self.valid_unseen: list[tuple[str, str, str]] = []
        self.test_unseen: list[tuple[str, str, str]] = []
        self.duplicates_dropped = 0
        self.out_adj: list[list[tuple[int, int]]] = []
        self.in_adj: list[list[tuple[int, int]]] = []

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @classmethod
    def from_files(cls, train_path, valid_path=None, test_path=None) -> "KnowledgeGraph":
        kg = cls()
        train = load_triples(train_path)
        kg.entities, kg.relations = train.vocab_entities, train.vocab_relations
        kg.train = train.triples
        kg.duplicates_dropped = train.duplicates_dropped
        if valid_path is not None:
            res = load_triples(valid_path, vocab=(kg.entities, kg.relations))
            kg.valid, kg.valid_unseen = res.triples, res.unseen
            kg.duplicates_dropped += res.duplicates_dropped
        if test_path is not None:
            res = load_triples(test_path, vocab=(kg.entities, kg.relations))
            kg.test, kg.test_unseen = res.triples, res.unseen
            kg.duplicates_dropped += res.duplicates_dropped
        build_adjacency(kg)
        return kg

    @classmethod
    def from_triples(cls, train, valid=(), test=()) -> "KnowledgeGraph":
        """Build from in-memory (head, relation, tail) label triples."""
        kg = cls()
        seen = set()
        for h, r, t in train:
            h, r, t = str(h), str(r), str(t)
            key = (h, r, t)
            if key in seen:
                kg.duplicates_dropped += 1
                continue
            seen.add(key)
            kg.train.append((kg.entities.add(h), kg.relations.add(r), kg.entities.add(t)))
        for src, dst, unseen_dst in ((valid, "valid", "valid_unseen"), (test, "test", "test_unseen")):
            seen_split = set()
            for h, r, t in src:
                h, r, t = str(h), str(r), str(t)
                if (h, r, t) in seen_split:
                    kg.duplicates_dropped += 1
                    continue
                seen_split.add((h, r, t))
                if h in kg.entities and t in kg.entities and r in kg.relations:
                    getattr(kg, dst).append(
                        (kg.entities.index[h], kg.relations.index[r], kg.entities.index[t])
                    )
                else:
                    getattr(kg, unseen_dst).append((h, r, t))
        build_adjacency(kg)
        return kg


def _parse_line(line: str, lineno: int, path) -> tuple[str, str, str]:
    fields = line.rstrip("\n").rstrip("\r").split("\t")
    if len(fields) != 3:
        raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
    return fields[0], fields[1], fields[2]


def load_triples(path, vocab=None):
    """Parse one TSV split.

    Without ``vocab``, builds fresh entity/relation vocabularies in first
    occurrence order and returns them on the result. With ``vocab`` (an
    (entities, relations) pair), lines using unknown labels go to the
    ``unseen`` list instead of extending the vocabularies.

    Duplicate lines within the file are dropped and counted.

    Raises:
        DataError: missing file, empty file, or a line with the wrong
            number of fields (reported with its line number).
    """
    if not os.path.exists(path):
        raise DataError(f"triple file not found: {path}")
    triples: list[Triple] = []
    unseen: list[tuple[str, str, str]] = []
    duplicates = 0
    seen: set[tuple[str, str, str]] = set()
    if vocab is None:
        entities, relations = Vocab(), Vocab()
        building = True
    else:
        entities, relations = vocab
        building = False
    lineno = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            h, r, t = _parse_line(line, lineno, path)
            if (h, r, t) in seen:
                duplicates += 1
                continue
            seen.add((h, r, t))
            if building:
                triples.append((entities.add(h), relations.add(r), entities.add(t)))
            elif h in entities and t in entities and r in relations:
                triples.append((entities.index[h], relations.index[r], entities.index[t]))
            else:
                unseen.append((h, r, t))
    if lineno == 0:
        raise DataError(f"empty triple file: {path}")
    result = LoadResult(triples=triples, unseen=unseen, duplicates_dropped=duplicates)
    if building:
        result.vocab_entities = entities
        result.vocab_relations = relations
    return result


def build_adjacency(kg: KnowledgeGraph) -> None:
    """Populate out_adj/in_adj from the train split.

    For every train triple (h, r, t): (r, t) is appended to out_adj[h]
    and (r, h) to in_adj[t], so the two structures together hold each
    triple exactly twice.
    """
    n = kg.n_entities
    kg.out_adj = [[] for _ in range(n)]
    kg.in_adj = [[] for _ in range(n)]
    for h, r, t in kg.train:
        kg.out_adj[h].append((r, t))
        kg.in_adj[t].append((r, h))


def degree(kg: KnowledgeGraph, e: int) -> int:
    """|I(e)| + |O(e)| over train triples."""
    return len(kg.out_adj[e]) + len(kg.in_adj[e])


def filter_evaluable(kg: KnowledgeGraph, split: str) -> tuple[list[Triple], int]:
    """Return the split's rankable triples plus the count of excluded ones.

    A triple is rankable when its head, tail, and relation all occur in
    the training vocabulary. Index-form triples satisfy this by
    construction; the excluded count is the number of raw unseen lines
    recorded at load time.
    """
    if split == "valid":
        return list(kg.valid), len(kg.valid_unseen)
    if split == "test":
        return list(kg.test), len(kg.test_unseen)
    if split == "train":
        return list(kg.train), 0
    raise ValueError(f"unknown split: {split!r}")


def dump_vocab(vocab: Vocab, path) -> None:
    """Write the vocabulary as a JSON array of labels in index order."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(vocab.labels, f, ensure_ascii=False, indent=0)
        f.write("\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as f:
        labels = json.load(f)
    v = Vocab()
    for label in labels:
        v.add(label)
    if len(v) != len(labels):
        raise DataError(f"vocabulary file has duplicate labels: {path}")
    return v


def split_stats(kg: KnowledgeGraph) -> dict:
    """Dataset statistics in the usual benchmark-table layout."""
    return {
        "entities": kg.n_entities,
        "relations": kg.n_relations,
        "train": len(kg.train),
        "valid": len(kg.valid),
        "test": len(kg.test),
        "valid_unseen": len(kg.valid_unseen),
        "test_unseen": len(kg.test_unseen),
        "duplicates_dropped": kg.duplicates_dropped,
    }


def fingerprint(kg: KnowledgeGraph) -> dict:
    """Stable identity of the dataset a model was trained against."""
    h = hashlib.sha256()
    for label in kg.entities.labels:
        h.update(label.encode("utf-8"))
        h.update(b"\x00")
    h.update(b"\x01")
    for label in kg.relations.labels:
        h.update(label.encode("utf-8"))
        h.update(b"\x00")
    return {
        "entities": kg.n_entities,
        "relations": kg.n_relations,
        "train": len(kg.train),
        "vocab_sha256": h.hexdigest(),
    }


def relation_frequencies(kg: KnowledgeGraph) -> tuple[Counter, Counter]:
    """(head-side, tail-side) frequency counters over train triples."""
    head_side: Counter = Counter()
    tail_side: Counter = Counter()
    for h, r, t in kg.train:
        head_side[(h, r)] += 1
        tail_side[(t, r)] += 1
    return head_side, tail_side
