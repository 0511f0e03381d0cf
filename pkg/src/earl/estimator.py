"""Estimator-style wrapper so the embedding engine plugs into sklearn
pipelines and model-selection tooling.

``fit`` takes an (n, 3) array-like of (head, relation, tail) label
triples, ``transform`` maps entity labels to their encoded embedding
rows, and ``score_triples``/``evaluate`` expose the trained scorer.
Hyperparameter names and defaults mirror ``TrainConfig``.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .encoder import encode_all
from .errors import ConfigError
from .evaluation import EvalReport, build_filter_sets, evaluate_embeddings, rank_triple
from .kg import KnowledgeGraph
from .scoring import rotate_scores
from .training import TrainConfig, train


def check_triple_array(X, n_cols: int = 3) -> np.ndarray:
    """Validate an array-like of label rows; returns an (n, n_cols) str array."""
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 1 and arr.size and isinstance(arr[0], (tuple, list)):
        arr = np.asarray([list(row) for row in arr], dtype=object)
    if arr.ndim != 2 or arr.shape[1] != n_cols:
        raise ValueError(f"expected an (n, {n_cols}) array of labels, "
                         f"got shape {getattr(arr, 'shape', None)}")
    if arr.shape[0] == 0:
        raise ValueError("expected at least one row")
    return arr.astype(str)


class EarlEmbedding(BaseEstimator):
    """Knowledge-graph embedder whose size ignores the entity vocabulary.

    Only a reserved subset of entities gets trainable embeddings;
    everything else is encoded from its relation profile, its nearest
    reserved entities, and message passing over the training graph.

    Attributes after fit:
        kg_: the indexed training graph.
        params_: trained model parameters.
        embeddings_: (|E|, 2*dim) encoded entity matrix.
        relation_embeddings_: (|R|, 2*dim) encoded relation matrix.
        losses_: per-step training losses.
        n_parameters_: trainable parameter count.
    """

    def __init__(self, dim=100, k=10, reserved_fraction=0.10, reserved_count=None,
                 layers=2, learning_rate=0.001, batch_size=1024, n_negatives=256,
                 gamma=10.0, alpha=1.0, max_steps=100_000, seed=0, ablation="full",
                 max_neighbors=None):
        self.dim = dim
        self.k = k
        self.reserved_fraction = reserved_fraction
        self.reserved_count = reserved_count
        self.layers = layers
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_negatives = n_negatives
        self.gamma = gamma
        self.alpha = alpha
        self.max_steps = max_steps
        self.seed = seed
        self.ablation = ablation
        self.max_neighbors = max_neighbors

    def _config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim, k=self.k, reserved_fraction=self.reserved_fraction,
            reserved_count=self.reserved_count, layers=self.layers,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            n_negatives=self.n_negatives, gamma=self.gamma, alpha=self.alpha,
            max_steps=self.max_steps, seed=self.seed, ablation=self.ablation,
            max_neighbors=self.max_neighbors)

    def fit(self, X, y=None):
        """Train on (head, relation, tail) label triples."""
        triples = check_triple_array(X)
        config = self._config()
        config.validate()
        kg = KnowledgeGraph.from_triples(triples.tolist())
        result = train(kg, config)
        self.kg_ = kg
        self.params_ = result.params
        self.context_ = result.context
        self.index_ = result.index
        self.losses_ = result.losses
        self.n_parameters_ = result.param_count
        h, rel = encode_all(result.params, result.context)
        self.embeddings_ = h.values
        self.relation_embeddings_ = rel.values
        return self

    def _require_fitted(self):
        if not hasattr(self, "embeddings_"):
            raise ConfigError("this estimator is not fitted yet; call fit first")

    def _entity_indices(self, labels) -> np.ndarray:
        vocab = self.kg_.entities.index
        out = np.empty(len(labels), dtype=np.int64)
        unknown = []
        for i, label in enumerate(labels):
            j = vocab.get(str(label))
            if j is None:
                unknown.append(str(label))
            else:
                out[i] = j
        if unknown:
            raise ValueError(f"{len(unknown)} entity label(s) not in the training "
                             f"vocabulary, e.g. {unknown[:3]}")
        return out

    def _relation_indices(self, labels) -> np.ndarray:
        vocab = self.kg_.relations.index
        try:
            return np.asarray([vocab[str(r)] for r in labels], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"relation label {e.args[0]!r} not in the training vocabulary")

    def transform(self, X) -> np.ndarray:
        """Entity labels -> encoded embedding rows of width 2*dim."""
        self._require_fitted()
        labels = np.asarray(X, dtype=object).ravel()
        return self.embeddings_[self._entity_indices(labels)]

    def score_triples(self, X) -> np.ndarray:
        """Rotation scores (<= 0, higher is more plausible) per triple."""
        self._require_fitted()
        triples = check_triple_array(X)
        h = self._entity_indices(triples[:, 0])
        r = self._relation_indices(triples[:, 1])
        t = self._entity_indices(triples[:, 2])
        return rotate_scores(self.embeddings_[h], self.relation_embeddings_[r],
                             self.embeddings_[t]).values

    def predict(self, X) -> np.ndarray:
        """Most plausible tail label for each (head, relation) pair."""
        self._require_fitted()
        pairs = check_triple_array(X, n_cols=2)
        h_idx = self._entity_indices(pairs[:, 0])
        r_idx = self._relation_indices(pairs[:, 1])
        from .evaluation import score_candidates

        out = []
        for h, r in zip(h_idx, r_idx):
            scores = score_candidates((int(h), int(r), 0), "tail",
                                      self.embeddings_, self.relation_embeddings_)
            out.append(self.kg_.entities.labels[int(np.argmax(scores))])
        return np.asarray(out, dtype=object)

    def rank_triples(self, X, direction: str = "tail",
                     filter_unrankable: bool = False) -> np.ndarray:
        """Filtered ranks of given triples against the training graph."""
        self._require_fitted()
        triples, _ = self._map_eval_triples(X, filter_unrankable)
        filter_sets = self._filter_sets_with(triples)
        return np.asarray([
            rank_triple(tr, direction, self.embeddings_, self.relation_embeddings_,
                        filter_sets)
            for tr in triples
        ])

    def _map_eval_triples(self, X, skip_unseen: bool):
        raw = check_triple_array(X)
        mapped, skipped = [], 0
        for h, r, t in raw:
            if (h in self.kg_.entities and t in self.kg_.entities
                    and r in self.kg_.relations):
                mapped.append((self.kg_.entities.index[h],
                               self.kg_.relations.index[r],
                               self.kg_.entities.index[t]))
            elif skip_unseen:
                skipped += 1
            else:
                raise ValueError(f"triple ({h}, {r}, {t}) uses labels outside the "
                                 f"training vocabulary; pass filter_unrankable=True "
                                 f"to drop such triples")
        return mapped, skipped

    def _filter_sets_with(self, extra_triples):
        shadow = KnowledgeGraph.__new__(KnowledgeGraph)
        shadow.train = self.kg_.train
        shadow.valid = []
        shadow.test = list(extra_triples)
        return build_filter_sets(shadow)

    def evaluate(self, X, filter_unrankable: bool = True) -> EvalReport:
        """Filtered MRR / Hits@k of held-out label triples.

        The filter set is the training graph plus the given triples.
        """
        self._require_fitted()
        triples, skipped = self._map_eval_triples(X, filter_unrankable)
        if not triples:
            raise ValueError("no evaluable triples given")
        shadow = KnowledgeGraph.__new__(KnowledgeGraph)
        shadow.train = self.kg_.train
        shadow.valid = []
        shadow.test = triples
        shadow.valid_unseen = []
        shadow.test_unseen = [None] * skipped
        report = evaluate_embeddings(shadow, self.embeddings_, self.relation_embeddings_,
                                     "test", self.n_parameters_,
                                     config=self.get_params())
        return report
