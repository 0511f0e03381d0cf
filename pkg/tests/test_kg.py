import json
from collections import Counter

import numpy as np
import pytest

from earl.errors import DataError
from earl.kg import (KnowledgeGraph, build_adjacency, dump_vocab, filter_evaluable,
                     fingerprint, load_triples, load_vocab, split_stats)

from conftest import random_kg


def write_tsv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write("\t".join(row) + "\n")
    return path


class TestLoadTriples:
    def test_toy_counts(self, tmp_path):
        path = write_tsv(tmp_path / "train.tsv",
                         [("A", "r1", "B"), ("B", "r2", "C"), ("A", "r2", "C")])
        res = load_triples(path)
        assert len(res.vocab_entities) == 3
        assert len(res.vocab_relations) == 2
        assert len(res.triples) == 3

    def test_first_occurrence_vocab_order(self, tmp_path):
        path = write_tsv(tmp_path / "train.tsv",
                         [("Z", "r9", "A"), ("A", "r1", "Z"), ("M", "r9", "Z")])
        res = load_triples(path)
        assert res.vocab_entities.labels == ["Z", "A", "M"]
        assert res.vocab_relations.labels == ["r9", "r1"]
        assert res.triples[0] == (0, 0, 1)

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("A\tr1\tB\nA\tr1\n", encoding="utf-8")
        with pytest.raises(DataError, match=":2"):
            load_triples(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="empty"):
            load_triples(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_triples(tmp_path / "nope.tsv")

    def test_unseen_against_existing_vocab(self, tmp_path):
        train = write_tsv(tmp_path / "train.tsv", [("A", "r1", "B")])
        res = load_triples(train)
        valid = write_tsv(tmp_path / "valid.tsv",
                          [("A", "r1", "B"), ("X", "r1", "B"), ("A", "r7", "B")])
        out = load_triples(valid, vocab=(res.vocab_entities, res.vocab_relations))
        assert out.triples == [(0, 0, 1)]
        assert ("X", "r1", "B") in out.unseen
        assert ("A", "r7", "B") in out.unseen

    def test_duplicates_dropped_with_counter(self, tmp_path):
        path = write_tsv(tmp_path / "train.tsv",
                         [("A", "r1", "B"), ("A", "r1", "B"), ("B", "r1", "A")])
        res = load_triples(path)
        assert len(res.triples) == 2
        assert res.duplicates_dropped == 1

    def test_identifiers_are_opaque_bytes(self, tmp_path):
        path = write_tsv(tmp_path / "train.tsv",
                         [("/m/0 1", "rel.x", " spaced "), ("Ü", "rel.x", "/m/0 1")])
        res = load_triples(path)
        assert " spaced " in res.vocab_entities.index
        assert "Ü" in res.vocab_entities.index


class TestAdjacency:
    def test_single_triple(self):
        kg = KnowledgeGraph.from_triples([("A", "r1", "B")])
        a, b = kg.entities.index["A"], kg.entities.index["B"]
        r1 = kg.relations.index["r1"]
        assert kg.out_adj[a] == [(r1, b)]
        assert kg.in_adj[b] == [(r1, a)]
        assert kg.out_adj[b] == [] and kg.in_adj[a] == []

    def test_two_triples_degree(self):
        kg = KnowledgeGraph.from_triples([("A", "r1", "B"), ("B", "r2", "A")])
        a = kg.entities.index["A"]
        assert len(kg.in_adj[a]) + len(kg.out_adj[a]) == 2

    def test_random_graph_totals(self, rng):
        kg = random_kg(rng, n_entities=20, n_relations=4, n_triples=50)
        total = sum(len(x) for x in kg.out_adj) + sum(len(x) for x in kg.in_adj)
        assert total == 2 * len(kg.train)

    def test_multiset_reconstruction(self, rng):
        kg = random_kg(rng, n_entities=15, n_relations=3, n_triples=40)
        rebuilt = Counter()
        for h, pairs in enumerate(kg.out_adj):
            for r, t in pairs:
                rebuilt[(h, r, t)] += 1
        assert rebuilt == Counter(kg.train)


class TestFilterEvaluable:
    def test_unseen_head_excluded(self):
        kg = KnowledgeGraph.from_triples([("A", "r1", "B")], test=[("X", "r1", "B")])
        triples, skipped = filter_evaluable(kg, "test")
        assert triples == [] and skipped == 1

    def test_all_seen_identity(self):
        kg = KnowledgeGraph.from_triples(
            [("A", "r1", "B"), ("B", "r1", "C")], test=[("A", "r1", "C")])
        triples, skipped = filter_evaluable(kg, "test")
        assert len(triples) == 1 and skipped == 0

    def test_three_of_ten_fresh(self):
        train = [(f"e{i}", "r", f"e{i+1}") for i in range(8)]
        test = [(f"e{i}", "r", f"e{i+1}") for i in range(7)] \
            + [("new1", "r", "e0"), ("e0", "r", "new2"), ("new3", "r", "new4")]
        kg = KnowledgeGraph.from_triples(train, test=test)
        triples, skipped = filter_evaluable(kg, "test")
        assert len(triples) == 7 and skipped == 3

    def test_unknown_split(self):
        kg = KnowledgeGraph.from_triples([("A", "r", "B")])
        with pytest.raises(ValueError):
            filter_evaluable(kg, "dev")


class TestVocabRoundTrip:
    def test_dump_load_identity(self, tmp_path, rng):
        kg = random_kg(rng, n_entities=25, n_relations=5, n_triples=60)
        dump_vocab(kg.entities, tmp_path / "ents.json")
        loaded = load_vocab(tmp_path / "ents.json")
        assert loaded.labels == kg.entities.labels
        assert loaded.index == kg.entities.index

    def test_dump_is_plain_json_array(self, tmp_path):
        kg = KnowledgeGraph.from_triples([("A", "r", "B")])
        dump_vocab(kg.entities, tmp_path / "v.json")
        assert json.loads((tmp_path / "v.json").read_text()) == ["A", "B"]

    def test_duplicate_labels_rejected(self, tmp_path):
        (tmp_path / "v.json").write_text('["A", "A"]')
        with pytest.raises(DataError):
            load_vocab(tmp_path / "v.json")


def test_from_files_pipeline(tmp_path):
    write_tsv(tmp_path / "train.tsv", [("A", "r1", "B"), ("B", "r1", "C")])
    write_tsv(tmp_path / "valid.tsv", [("A", "r1", "C")])
    write_tsv(tmp_path / "test.tsv", [("C", "r1", "A"), ("Q", "r1", "A")])
    kg = KnowledgeGraph.from_files(tmp_path / "train.tsv", tmp_path / "valid.tsv",
                                   tmp_path / "test.tsv")
    stats = split_stats(kg)
    assert stats["entities"] == 3 and stats["train"] == 2
    assert stats["test"] == 1 and stats["test_unseen"] == 1
    assert len(kg.out_adj) == 3


def test_fingerprint_tracks_vocab():
    kg1 = KnowledgeGraph.from_triples([("A", "r", "B")])
    kg2 = KnowledgeGraph.from_triples([("A", "r", "B")])
    kg3 = KnowledgeGraph.from_triples([("A", "r", "C")])
    assert fingerprint(kg1) == fingerprint(kg2)
    assert fingerprint(kg1)["vocab_sha256"] != fingerprint(kg3)["vocab_sha256"]


def test_indices_within_bounds(rng):
    kg = random_kg(rng, n_entities=30, n_relations=6, n_triples=80, with_splits=True)
    for split in (kg.train, kg.test):
        for h, r, t in split:
            assert 0 <= h < kg.n_entities
            assert 0 <= t < kg.n_entities
            assert 0 <= r < kg.n_relations
