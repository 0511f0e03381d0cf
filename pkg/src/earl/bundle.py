"""Prepared dataset bundles.

``prepare`` turns raw TSV splits into a directory of deterministic
artifacts so later commands never re-parse or re-index:

    entities.json / relations.json   vocab dumps (JSON arrays, index order)
    train.npy / valid.npy / test.npy uint32 (n, 3) index triples
    valid_unseen.json / test_unseen.json   raw triples outside the vocab
    features_{indptr,indices,data}.npy     CSR of the (|E|, 2|R|) count matrix
    reserved.json                    reserved-set indices + seed + fraction
    knn.bin                          top-k cache (see features.KnnIndex)
    stats.json                       split statistics + dataset fingerprint

Re-running prepare on unchanged inputs reproduces every file byte for
byte.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .features import KnnIndex, RelationalFeatures, ReservedSet
from .kg import KnowledgeGraph, dump_vocab, fingerprint, load_vocab, split_stats

STATS_FILE = "stats.json"


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class Bundle:
    kg: KnowledgeGraph
    features: RelationalFeatures
    reserved: ReservedSet
    knn: KnnIndex
    stats: dict


def save_bundle(out_dir, kg: KnowledgeGraph, features: RelationalFeatures,
                reserved: ReservedSet, knn: KnnIndex, k: int) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)

    dump_vocab(kg.entities, join("entities.json"))
    dump_vocab(kg.relations, join("relations.json"))
    for split in ("train", "valid", "test"):
        arr = np.asarray(getattr(kg, split), dtype=np.uint32).reshape(-1, 3)
        np.save(join(f"{split}.npy"), arr)
    _write_json(join("valid_unseen.json"), [list(t) for t in kg.valid_unseen])
    _write_json(join("test_unseen.json"), [list(t) for t in kg.test_unseen])

    mat = features.matrix
    np.save(join("features_indptr.npy"), mat.indptr.astype(np.int64))
    np.save(join("features_indices.npy"), mat.indices.astype(np.int64))
    np.save(join("features_data.npy"), mat.data.astype(np.int64))

    _write_json(join("reserved.json"), {
        "fraction": reserved.fraction,
        "seed": reserved.seed,
        "indices": [int(i) for i in reserved.indices],
    })
    knn.save(join("knn.bin"))

    stats = split_stats(kg)
    stats["fingerprint"] = fingerprint(kg)
    stats["reserved"] = reserved.size
    stats["k"] = k
    _write_json(join(STATS_FILE), stats)
    return stats


def load_bundle(path) -> Bundle:
    if not os.path.isdir(path):
        raise DataError(f"bundle directory not found: {path}")
    join = lambda name: os.path.join(path, name)
    for required in ("entities.json", "relations.json", "train.npy", STATS_FILE):
        if not os.path.exists(join(required)):
            raise DataError(f"bundle is missing {required}: {path}")

    kg = KnowledgeGraph()
    kg.entities = load_vocab(join("entities.json"))
    kg.relations = load_vocab(join("relations.json"))
    for split in ("train", "valid", "test"):
        arr = np.load(join(f"{split}.npy"))
        setattr(kg, split, [tuple(int(x) for x in row) for row in arr])
    with open(join("valid_unseen.json"), encoding="utf-8") as f:
        kg.valid_unseen = [tuple(t) for t in json.load(f)]
    with open(join("test_unseen.json"), encoding="utf-8") as f:
        kg.test_unseen = [tuple(t) for t in json.load(f)]
    from .kg import build_adjacency

    build_adjacency(kg)

    indptr = np.load(join("features_indptr.npy"))
    indices = np.load(join("features_indices.npy"))
    data = np.load(join("features_data.npy"))
    mat = sp.csr_matrix((data, indices, indptr),
                        shape=(kg.n_entities, 2 * kg.n_relations))
    features = RelationalFeatures(mat, kg.n_relations)

    with open(join("reserved.json"), encoding="utf-8") as f:
        res_info = json.load(f)
    reserved = ReservedSet.from_indices(res_info["indices"], kg.n_entities,
                                        seed=res_info["seed"],
                                        fraction=res_info["fraction"])
    knn = KnnIndex.load(join("knn.bin"), reserved)

    with open(join(STATS_FILE), encoding="utf-8") as f:
        stats = json.load(f)
    return Bundle(kg=kg, features=features, reserved=reserved, knn=knn, stats=stats)
