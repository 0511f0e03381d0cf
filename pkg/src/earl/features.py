"""Relational features, reserved-entity selection, and k-NN retrieval.

Each entity gets a sparse count vector of logical length 2|R|: dimension
i < |R| counts how often the entity heads relation i in the train split,
dimension |R| + i how often it tails relation i. These counts are the
only entity-specific signal the encoders may consume, which is what
keeps the trained model independent of the entity vocabulary.

Retrieval is exact: cosine similarity against every reserved entity,
top-k with ties broken by ascending entity index. Lists are precomputed
once per dataset and can be cached to disk in a little-endian binary
format (see ``KnnIndex.save``).
"""

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .rng import STREAM_RESERVED, stream

KNN_MAGIC = b"EKNN"
KNN_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")
_RECORD_DTYPE = np.dtype([("idx", "<u4"), ("sim", "<f4")])


class RelationalFeatures:
    """Head/tail relation frequency counts for every entity.

    Stored collectively as a CSR matrix of shape (|E|, 2|R|) with int64
    counts; row e is entity e's feature vector. Euclidean norms are
    cached once at build time.
    """

    def __init__(self, matrix: sp.csr_matrix, n_relations: int):
        self.matrix = matrix
        self.n_relations = n_relations
        sq = matrix.multiply(matrix).sum(axis=1)
        self.norms = np.sqrt(np.asarray(sq, dtype=np.float64)).ravel()

    @property
    def n_entities(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def vector(self, e: int) -> np.ndarray:
        """Dense 1-D count vector for entity e."""
        return np.asarray(self.matrix.getrow(e).todense(), dtype=np.int64).ravel()

    def dense(self) -> np.ndarray:
        return np.asarray(self.matrix.todense(), dtype=np.float64)


def build_relational_features(kg) -> RelationalFeatures:
    """Count head/tail occurrences per (entity, relation) over train triples."""
    n_e, n_r = kg.n_entities, kg.n_relations
    rows = np.empty(2 * len(kg.train), dtype=np.int64)
    cols = np.empty(2 * len(kg.train), dtype=np.int64)
    for i, (h, r, t) in enumerate(kg.train):
        rows[2 * i], cols[2 * i] = h, r
        rows[2 * i + 1], cols[2 * i + 1] = t, n_r + r
    data = np.ones(2 * len(kg.train), dtype=np.int64)
    mat = sp.coo_matrix((data, (rows, cols)), shape=(n_e, 2 * n_r)).tocsr()
    mat.sum_duplicates()
    return RelationalFeatures(mat, n_r)


@dataclass
class ReservedSet:
    """The entity subset that keeps trainable embeddings.

    indices: sorted, distinct global entity ids.
    mask: boolean membership bitmap over all entities.
    position: global id -> slot in ``indices`` (-1 for non-members).
    """

    indices: np.ndarray
    mask: np.ndarray
    seed: int
    fraction: float

    @property
    def size(self) -> int:
        return len(self.indices)

    def __post_init__(self):
        self.position = np.full(len(self.mask), -1, dtype=np.int64)
        self.position[self.indices] = np.arange(len(self.indices))

    @classmethod
    def from_indices(cls, indices, n_entities: int, seed: int = 0, fraction: float = 0.0):
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if len(idx) and (idx[0] < 0 or idx[-1] >= n_entities):
            raise DataError("reserved entity index out of range")
        mask = np.zeros(n_entities, dtype=bool)
        mask[idx] = True
        return cls(indices=idx, mask=mask, seed=seed, fraction=fraction)


def select_reserved(n_entities: int, fraction: float = 0.10, seed: int = 0) -> ReservedSet:
    """Sample floor(fraction * |E|) entities uniformly without replacement.

    Reproducible from the seed; the returned index list is sorted.

    Raises:
        ConfigError: if the fraction yields an empty set.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"reserved fraction must be in (0, 1], got {fraction}")
    size = int(np.floor(fraction * n_entities))
    if size < 1:
        raise ConfigError(
            f"reserved fraction {fraction} of {n_entities} entities selects nothing"
        )
    g = stream(seed, STREAM_RESERVED)
    indices = np.sort(g.choice(n_entities, size=size, replace=False))
    mask = np.zeros(n_entities, dtype=bool)
    mask[indices] = True
    return ReservedSet(indices=indices, mask=mask, seed=seed, fraction=fraction)


def cosine_similarity(a, b) -> float:
    """Cosine of two count vectors; 0.0 when either has zero norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def knn_weights(similarities) -> np.ndarray:
    """Softmax over raw similarity values (max-subtracted for stability)."""
    s = np.asarray(similarities, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("knn_weights needs a non-empty similarity list")
    z = np.exp(s - s.max())
    return z / z.sum()


def _similarity_block(features: RelationalFeatures, rows: np.ndarray, res_matrix, res_norms):
    """Dense (len(rows), n_reserved) cosine block; zero-norm rows/cols give 0."""
    block = features.matrix[rows].astype(np.float64)
    sims = np.asarray((block @ res_matrix.T).todense(), dtype=np.float64)
    qn = features.norms[rows]
    denom = np.outer(qn, res_norms)
    out = np.zeros_like(sims)
    np.divide(sims, denom, out=out, where=denom > 0)
    return out


def retrieve_topk(e: int, features: RelationalFeatures, reserved: ReservedSet, k: int):
    """The k most-similar reserved entities for entity e.

    Returns (entity id, similarity) pairs sorted by descending
    similarity, ties by ascending entity id. A reserved entity may
    retrieve itself. Shorter than k when the reserved set is smaller.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    res_matrix = features.matrix[reserved.indices].astype(np.float64)
    sims = _similarity_block(features, np.asarray([e]), res_matrix, features.norms[reserved.indices])[0]
    order = np.argsort(-sims, kind="stable")[: min(k, reserved.size)]
    return [(int(reserved.indices[j]), float(sims[j])) for j in order]


class KnnIndex:
    """Precomputed top-k reserved neighbors for every entity.

    neighbor_slots[e, j] is the j-th neighbor's slot in the reserved
    list (not its global id); similarities[e, j] the matching cosine.
    """

    def __init__(self, neighbor_slots, similarities, reserved: ReservedSet,
                 n_relations: int, k: int):
        self.neighbor_slots = neighbor_slots
        self.similarities = similarities
        self.reserved = reserved
        self.n_relations = n_relations
        self.k = k

    @property
    def n_entities(self) -> int:
        return self.neighbor_slots.shape[0]

    @property
    def k_effective(self) -> int:
        return self.neighbor_slots.shape[1]

    def neighbors(self, e: int):
        """(global entity id, similarity) pairs for entity e."""
        ids = self.reserved.indices[self.neighbor_slots[e]]
        return [(int(i), float(s)) for i, s in zip(ids, self.similarities[e])]

    def weight_matrix(self) -> sp.csr_matrix:
        """CSR (|E|, |reserved|) of softmax neighbor weights.

        Row e holds the weighted-sum coefficients that turn reserved
        embeddings into entity e's neighbor encoding.
        """
        n_e, k_eff = self.neighbor_slots.shape
        weights = np.empty((n_e, k_eff), dtype=np.float64)
        for e in range(n_e):
            weights[e] = knn_weights(self.similarities[e])
        indptr = np.arange(0, n_e * k_eff + 1, k_eff)
        mat = sp.csr_matrix(
            (weights.ravel(), self.neighbor_slots.ravel().astype(np.int64), indptr),
            shape=(n_e, self.reserved.size),
        )
        mat.sum_duplicates()
        return mat

    @classmethod
    def build(cls, features: RelationalFeatures, reserved: ReservedSet, k: int = 10,
              block: int = 2048) -> "KnnIndex":
        """Exact top-k by blockwise dense similarity against the reserved set."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if reserved.size == 0:
            raise ConfigError("cannot build a k-NN index over an empty reserved set")
        k_eff = min(k, reserved.size)
        n_e = features.n_entities
        res_matrix = features.matrix[reserved.indices].astype(np.float64)
        res_norms = features.norms[reserved.indices]
        slots = np.empty((n_e, k_eff), dtype=np.int64)
        sims = np.empty((n_e, k_eff), dtype=np.float64)
        for start in range(0, n_e, block):
            rows = np.arange(start, min(start + block, n_e))
            s = _similarity_block(features, rows, res_matrix, res_norms)
            # stable sort on -sim keeps ascending slot (= ascending id) order on ties
            order = np.argsort(-s, axis=1, kind="stable")[:, :k_eff]
            slots[rows] = order
            sims[rows] = np.take_along_axis(s, order, axis=1)
        return cls(slots, sims, reserved, features.n_relations, k)

    def save(self, path) -> None:
        """Write the cache: header (magic, version, |E|, |R|, k, seed) then
        |E| * k records of (uint32 reserved slot, float32 similarity)."""
        records = np.empty(self.neighbor_slots.size, dtype=_RECORD_DTYPE)
        records["idx"] = self.neighbor_slots.ravel()
        records["sim"] = self.similarities.ravel()
        header = _HEADER.pack(
            KNN_MAGIC, KNN_VERSION, self.n_entities, self.n_relations,
            self.k_effective, self.reserved.seed & 0xFFFFFFFFFFFFFFFF,
        )
        with open(path, "wb") as f:
            f.write(header)
            records.tofile(f)

    def truncated(self, k: int) -> "KnnIndex":
        """Index over only the first k neighbors (lists are similarity-sorted)."""
        if k > self.k_effective:
            raise ConfigError(
                f"cached k-NN lists hold {self.k_effective} neighbors; "
                f"{k} requested (rebuild the cache with a larger k)")
        if k == self.k_effective:
            return self
        return KnnIndex(self.neighbor_slots[:, :k], self.similarities[:, :k],
                        self.reserved, self.n_relations, k)

    @classmethod
    def load(cls, path, reserved: ReservedSet) -> "KnnIndex":
        with open(path, "rb") as f:
            raw = f.read(_HEADER.size)
            if len(raw) != _HEADER.size:
                raise DataError(f"truncated k-NN cache: {path}")
            magic, version, n_e, n_r, k, seed = _HEADER.unpack(raw)
            if magic != KNN_MAGIC:
                raise DataError(f"not a k-NN cache (bad magic): {path}")
            if version != KNN_VERSION:
                raise DataError(f"unsupported k-NN cache version {version}: {path}")
            records = np.fromfile(f, dtype=_RECORD_DTYPE)
        if records.size != n_e * k:
            raise DataError(f"k-NN cache record count mismatch: {path}")
        if seed != reserved.seed & 0xFFFFFFFFFFFFFFFF:
            raise DataError(f"k-NN cache was built for a different reserved seed: {path}")
        slots = records["idx"].astype(np.int64).reshape(n_e, k)
        if slots.size and slots.max() >= reserved.size:
            raise DataError(f"k-NN cache references slots beyond the reserved set: {path}")
        sims = records["sim"].astype(np.float64).reshape(n_e, k)
        return cls(slots, sims, reserved, n_r, k)
