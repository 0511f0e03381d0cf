"""Entity-agnostic embedding encoder.

Entities are embedded in three stages, none of which grows with |E|:

1. relation-profile encoding: the entity's head/tail count vector mixes
   rows of a relation-end embedding table (one row per relation
   endpoint) and passes through a 2-layer MLP;
2. neighbor encoding: a softmax-weighted sum of the embeddings of its
   k most similar reserved entities;
3. message passing: an L-layer relational GNN over the train graph
   refines all entity and relation representations.

Reserved entities skip stages 1-2; their input representation is read
straight from the trainable reserved embedding matrix. Every stage can
be ablated independently; with both stage-1 and stage-2 off,
non-reserved entities enter the GNN with frozen seeded random vectors.

Working width is D = 2 * dim reals: scoring reads a width-D row as
dim complex coordinates.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import ConfigError
from .rng import STREAM_INIT, STREAM_NEIGHBOR_CAP, frozen_entity_matrix, stream

ABLATION_ORDER = ["full", "no_reserved", "no_conrel", "no_knresent",
                  "no_conrel_knresent", "no_mulhop"]


@dataclass(frozen=True)
class AblationFlags:
    """Which information sources feed the encoder."""

    use_reserved: bool = True
    use_conrel: bool = True
    use_knresent: bool = True
    use_mulhop: bool = True

    def __post_init__(self):
        if self.use_knresent and not self.use_reserved:
            raise ConfigError("neighbor encoding needs a reserved set: "
                              "use_knresent requires use_reserved")

    @property
    def uses_combiner(self) -> bool:
        return self.use_conrel and self.use_knresent

    @property
    def uses_frozen_inputs(self) -> bool:
        return not self.use_conrel and not self.use_knresent

    @classmethod
    def variant(cls, name: str) -> "AblationFlags":
        table = {
            "full": cls(),
            "no_reserved": cls(use_reserved=False, use_knresent=False),
            "no_conrel": cls(use_conrel=False),
            "no_knresent": cls(use_knresent=False),
            "no_conrel_knresent": cls(use_conrel=False, use_knresent=False),
            "no_mulhop": cls(use_mulhop=False),
        }
        if name not in table:
            raise ConfigError(f"unknown ablation variant {name!r}; "
                              f"choose from {sorted(table)}")
        return table[name]


@dataclass
class Mlp:
    """Two affine layers with a ReLU between them."""

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    def __call__(self, x):
        hidden = ad.relu(ad.add_rowvec(ad.matmul(x, self.w1), self.b1))
        return ad.add_rowvec(ad.matmul(hidden, self.w2), self.b2)

    def tensors(self, prefix):
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


@dataclass
class GnnLayer:
    """One message-passing layer.

    Weight matrices are stored (fan_in, fan_out) for row-vector
    batches: out/in transforms take the [relation; neighbor]
    concatenation (2D wide) down to D.
    """

    w_out: ad.Tensor
    w_in: ad.Tensor
    w_self: ad.Tensor
    w_rel: ad.Tensor

    def tensors(self, prefix):
        return {f"{prefix}.w_out": self.w_out, f"{prefix}.w_in": self.w_in,
                f"{prefix}.w_self": self.w_self, f"{prefix}.w_rel": self.w_rel}


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ModelParams:
    """All trainable tensors, shaped by (n_relations, n_reserved, dim, layers, flags)."""

    dim: int
    n_relations: int
    n_reserved: int
    n_layers: int
    flags: AblationFlags
    e_res: ad.Tensor | None = None
    r_end: ad.Tensor | None = None
    r_emb: ad.Tensor | None = None
    f_r: Mlp | None = None
    f_m: Mlp | None = None
    layers: list = field(default_factory=list)

    @property
    def width(self) -> int:
        return 2 * self.dim

    @classmethod
    def init(cls, n_relations: int, n_reserved: int, dim: int, n_layers: int = 2,
             flags: AblationFlags = AblationFlags(), seed: int = 0) -> "ModelParams":
        """Fresh parameters: Glorot-uniform weight matrices, uniform
        [-0.5, 0.5] embedding tables, zero biases."""
        if dim < 1:
            raise ConfigError(f"dim must be >= 1, got {dim}")
        if flags.use_reserved and n_reserved < 1:
            raise ConfigError("use_reserved needs a non-empty reserved set")
        d = 2 * dim
        rng = stream(seed, STREAM_INIT)
        p = cls(dim=dim, n_relations=n_relations, n_reserved=n_reserved,
                n_layers=n_layers, flags=flags)

        def emb(shape, name):
            return ad.Tensor(rng.uniform(-0.5, 0.5, size=shape), requires_grad=True, name=name)

        def mat(fan_in, fan_out, name):
            return ad.Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True, name=name)

        def bias(n, name):
            return ad.Tensor(np.zeros(n), requires_grad=True, name=name)

        if flags.use_reserved:
            p.e_res = emb((n_reserved, d), "reserved_embeddings")
        if flags.use_conrel:
            p.r_end = emb((2 * n_relations, d), "relation_end_embeddings")
        p.r_emb = emb((n_relations, d), "relation_embeddings")
        if flags.use_conrel:
            p.f_r = Mlp(mat(d, d, "relation_profile_mlp.w1"), bias(d, "relation_profile_mlp.b1"),
                        mat(d, d, "relation_profile_mlp.w2"), bias(d, "relation_profile_mlp.b2"))
        if flags.uses_combiner:
            p.f_m = Mlp(mat(2 * d, d, "combine_mlp.w1"), bias(d, "combine_mlp.b1"),
                        mat(d, d, "combine_mlp.w2"), bias(d, "combine_mlp.b2"))
        if flags.use_mulhop:
            for layer in range(n_layers):
                p.layers.append(GnnLayer(
                    mat(2 * d, d, f"gnn.{layer}.w_out"),
                    mat(2 * d, d, f"gnn.{layer}.w_in"),
                    mat(d, d, f"gnn.{layer}.w_self"),
                    mat(d, d, f"gnn.{layer}.w_rel"),
                ))
        return p

    def named(self) -> dict[str, ad.Tensor]:
        """Trainable tensors in canonical (checkpoint) order."""
        out: dict[str, ad.Tensor] = {}
        if self.e_res is not None:
            out["reserved_embeddings"] = self.e_res
        if self.r_end is not None:
            out["relation_end_embeddings"] = self.r_end
        out["relation_embeddings"] = self.r_emb
        if self.f_r is not None:
            out.update(self.f_r.tensors("relation_profile_mlp"))
        if self.f_m is not None:
            out.update(self.f_m.tensors("combine_mlp"))
        for i, layer in enumerate(self.layers):
            out.update(layer.tensors(f"gnn.{i}"))
        return out

    def count(self) -> int:
        return sum(t.size for t in self.named().values())

    def zero_grads(self) -> None:
        for t in self.named().values():
            t.zero_grad()


def count_params(n_relations: int, n_reserved: int, dim: int, n_layers: int = 2,
                 flags: AblationFlags = AblationFlags()) -> tuple[int, dict[str, int]]:
    """Closed-form trainable parameter count and its per-component breakdown.

    Independent of the entity vocabulary except through the reserved-set
    size.
    """
    d = 2 * dim
    breakdown: dict[str, int] = {}
    if flags.use_reserved:
        breakdown["reserved_embeddings"] = n_reserved * d
    if flags.use_conrel:
        breakdown["relation_end_embeddings"] = 2 * n_relations * d
        breakdown["relation_profile_mlp"] = 2 * d * d + 2 * d
    if flags.uses_combiner:
        breakdown["combine_mlp"] = (2 * d) * d + d + d * d + d
    breakdown["relation_embeddings"] = n_relations * d
    if flags.use_mulhop:
        breakdown["gnn"] = n_layers * (2 * (2 * d) * d + 2 * d * d)
    return sum(breakdown.values()), breakdown


def count_params_plain_rotate(n_entities: int, n_relations: int, dim: int) -> tuple[int, dict[str, int]]:
    """Parameter count of a conventional lookup-table rotation model at the
    same complex dimension: every entity owns 2*dim reals, every relation
    dim phases."""
    breakdown = {
        "entity_embeddings": n_entities * 2 * dim,
        "relation_embeddings": n_relations * dim,
    }
    return sum(breakdown.values()), breakdown


class EncoderContext:
    """Constant (non-trainable) graph structure prepared once per dataset.

    Holds the sparse operators the encoder multiplies through: the
    feature matrix, the k-NN weight matrix, reserved-row placement, and
    the edge incidence used for message aggregation.
    """

    def __init__(self, kg, features, knn_index=None, reserved=None,
                 flags: AblationFlags = AblationFlags(), dim: int = 32, seed: int = 0):
        self.flags = flags
        self.dim = dim
        self.seed = seed
        self.n_entities = kg.n_entities
        self.n_relations = kg.n_relations

        if flags.use_conrel:
            self.feature_matrix = features.matrix.astype(np.float64).tocsr()
        else:
            self.feature_matrix = None

        self.reserved = reserved
        if flags.use_reserved:
            if reserved is None:
                raise ConfigError("flags request reserved entities but none were given")
            rows = reserved.indices
            data = np.ones(len(rows))
            self.reserved_placement = sp.csr_matrix(
                (data, (rows, np.arange(len(rows)))),
                shape=(kg.n_entities, len(rows)))
            mask = np.ones((kg.n_entities, 1))
            mask[rows] = 0.0
            self.nonreserved_mask = mask
        else:
            self.reserved_placement = None
            self.nonreserved_mask = np.ones((kg.n_entities, 1))

        if flags.use_knresent:
            if knn_index is None:
                raise ConfigError("flags request neighbor encoding but no k-NN index was given")
            self.knn_weights = knn_index.weight_matrix()
        else:
            self.knn_weights = None

        if flags.uses_frozen_inputs:
            self.frozen_inputs = frozen_entity_matrix(seed, kg.n_entities, 2 * dim)
        else:
            self.frozen_inputs = None

        triples = np.asarray(kg.train, dtype=np.int64).reshape(-1, 3)
        self.head_idx = triples[:, 0]
        self.rel_idx = triples[:, 1]
        self.tail_idx = triples[:, 2]
        self._full_incidence = self._build_incidence(
            np.arange(len(triples)), np.arange(len(triples)))

    def _build_incidence(self, out_edges, in_edges):
        n_t = len(self.head_idx)
        s_out = sp.csr_matrix(
            (np.ones(len(out_edges)), (self.head_idx[out_edges], out_edges)),
            shape=(self.n_entities, n_t))
        s_in = sp.csr_matrix(
            (np.ones(len(in_edges)), (self.tail_idx[in_edges], in_edges)),
            shape=(self.n_entities, n_t))
        deg = np.asarray(s_out.sum(axis=1)).ravel() + np.asarray(s_in.sum(axis=1)).ravel()
        inv_c = 1.0 / np.maximum(deg, 1.0)
        return s_out, s_in, inv_c[:, None]

    def incidence(self, max_neighbors=None, rng=None):
        """(S_out, S_in, 1/c) operators; optionally neighbor-capped.

        With a cap, every entity keeps at most max_neighbors incident
        pairs, sampled uniformly without replacement from the union of
        its out- and in-pairs; the normalization constant follows the
        sampled count.
        """
        if max_neighbors is None:
            return self._full_incidence
        if rng is None:
            raise ConfigError("neighbor-capped aggregation needs a step generator")
        if not hasattr(self, "_pairs_by_entity"):
            out_by_entity = [[] for _ in range(self.n_entities)]
            in_by_entity = [[] for _ in range(self.n_entities)]
            for j, (h, t) in enumerate(zip(self.head_idx, self.tail_idx)):
                out_by_entity[h].append(j)
                in_by_entity[t].append(j)
            self._pairs_by_entity = (out_by_entity, in_by_entity)
        out_by_entity, in_by_entity = self._pairs_by_entity
        keep_out, keep_in = [], []
        for e in range(self.n_entities):
            n_out, n_in = len(out_by_entity[e]), len(in_by_entity[e])
            if n_out + n_in <= max_neighbors:
                keep_out.extend(out_by_entity[e])
                keep_in.extend(in_by_entity[e])
                continue
            sel = rng.choice(n_out + n_in, size=max_neighbors, replace=False)
            for s in np.sort(sel):
                if s < n_out:
                    keep_out.append(out_by_entity[e][s])
                else:
                    keep_in.append(in_by_entity[e][s - n_out])
        return self._build_incidence(np.asarray(keep_out, dtype=np.int64),
                                     np.asarray(keep_in, dtype=np.int64))


def encode_all(params: ModelParams, ctx: EncoderContext, max_neighbors=None, step_rng=None):
    """Embed every entity and relation; returns (H, R) of shapes
    (|E|, D) and (|R|, D).

    Differentiable end to end; records onto the active tape.
    """
    flags = params.flags

    h_c = h_k = None
    if flags.use_conrel:
        pre = ad.sparse_matmul(ctx.feature_matrix, params.r_end)
        h_c = params.f_r(pre)
    if flags.use_knresent:
        h_k = ad.sparse_matmul(ctx.knn_weights, params.e_res)

    if flags.uses_combiner:
        nonres = params.f_m(ad.concat([h_c, h_k]))
    elif flags.use_conrel:
        nonres = h_c
    elif flags.use_knresent:
        nonres = h_k
    else:
        nonres = None  # frozen inputs

    if flags.use_reserved:
        placed = ad.sparse_matmul(ctx.reserved_placement, params.e_res)
        if nonres is None:
            h0 = ad.add(placed, ctx.frozen_inputs * ctx.nonreserved_mask)
        else:
            h0 = ad.add(ad.mul(nonres, ctx.nonreserved_mask), placed)
    else:
        h0 = nonres if nonres is not None else ad.Tensor(ctx.frozen_inputs)

    h, rel = h0, params.r_emb
    if flags.use_mulhop:
        s_out, s_in, inv_c = ctx.incidence(max_neighbors, step_rng)
        for layer in params.layers:
            rel_rows = ad.gather(rel, ctx.rel_idx)
            msg_out = ad.sparse_matmul(s_out, ad.concat([rel_rows, ad.gather(h, ctx.tail_idx)]))
            msg_in = ad.sparse_matmul(s_in, ad.concat([rel_rows, ad.gather(h, ctx.head_idx)]))
            m = ad.add(ad.matmul(msg_out, layer.w_out), ad.matmul(msg_in, layer.w_in))
            h = ad.relu(ad.add(ad.mul(m, inv_c), ad.matmul(h, layer.w_self)))
            rel = ad.relu(ad.matmul(rel, layer.w_rel))
    return h, rel


def encode_conrel(e: int, features, params: ModelParams) -> np.ndarray:
    """Relation-profile embedding of one entity (forward only)."""
    row = features.vector(e).astype(np.float64)[None, :]
    pre = row @ params.r_end.values
    return params.f_r(pre).values[0]


def encode_knresent(e: int, knn_index, params: ModelParams) -> np.ndarray:
    """Neighbor embedding of one entity: softmax-weighted reserved rows."""
    from .features import knn_weights as _softmax

    if params.e_res is None:
        raise ConfigError("neighbor encoding needs reserved embeddings")
    slots = knn_index.neighbor_slots[e]
    weights = _softmax(knn_index.similarities[e])
    return weights @ params.e_res.values[slots]


def combine_inputs(h_c, h_k, params: ModelParams, flags: AblationFlags, *,
                   entity: int | None = None, reserved=None, seed: int = 0) -> np.ndarray:
    """Input representation of one entity before message passing.

    Reserved entities bypass the combination entirely and read their row
    of the reserved embedding matrix.
    """
    if flags.use_reserved and reserved is not None and entity is not None \
            and reserved.mask[entity]:
        return np.array(params.e_res.values[reserved.position[entity]])
    if flags.uses_combiner:
        both = np.concatenate([np.asarray(h_c), np.asarray(h_k)])[None, :]
        return params.f_m(both).values[0]
    if flags.use_conrel:
        return np.asarray(h_c, dtype=np.float64)
    if flags.use_knresent:
        return np.asarray(h_k, dtype=np.float64)
    from .rng import frozen_entity_vector

    if entity is None:
        raise ConfigError("frozen input representation needs the entity index")
    return frozen_entity_vector(seed, entity, 2 * params.dim)
