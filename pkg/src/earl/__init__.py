"""Parameter-efficient knowledge graph embedding.

Only a small reserved subset of entities keeps trainable embeddings;
every other entity is encoded on the fly from entity-agnostic signals
(its relation profile, its nearest reserved entities, and message
passing over the training graph), so the model's size is independent of
the entity vocabulary. Scoring uses complex phase rotation; training
uses self-adversarial negative sampling.
"""

__version__ = "0.1.0"

from .encoder import AblationFlags, ModelParams, count_params, count_params_plain_rotate
from .errors import ConfigError, DataError, EarlError, NumericalError, ShapeError
from .estimator import EarlEmbedding
from .evaluation import EvalReport, evaluate_model, run_ablations, budget_sweep
from .features import (KnnIndex, RelationalFeatures, ReservedSet,
                       build_relational_features, cosine_similarity, knn_weights,
                       retrieve_topk, select_reserved)
from .kg import KnowledgeGraph, load_triples
from .training import TrainConfig, train

__all__ = [
    "__version__",
    "AblationFlags", "ModelParams", "count_params", "count_params_plain_rotate",
    "ConfigError", "DataError", "EarlError", "NumericalError", "ShapeError",
    "EarlEmbedding",
    "EvalReport", "evaluate_model", "run_ablations", "budget_sweep",
    "KnnIndex", "RelationalFeatures", "ReservedSet", "build_relational_features",
    "cosine_similarity", "knn_weights", "retrieve_topk", "select_reserved",
    "KnowledgeGraph", "load_triples",
    "TrainConfig", "train",
]
