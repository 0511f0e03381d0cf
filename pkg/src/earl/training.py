"""The optimization loop: batches, forward, loss, Adam, checkpoints.

Each step re-encodes the whole entity set (one tape), scores the
sampled positives against fresh uniform corruptions, and applies one
bias-corrected Adam update. All randomness comes from per-step streams
keyed on (seed, purpose, step), so a run can be resumed from any
checkpoint and continue bit-identically.
"""

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .encoder import AblationFlags, EncoderContext, ModelParams, count_params
from .errors import ConfigError, NumericalError
from .features import KnnIndex, ReservedSet, build_relational_features, select_reserved
from .rng import (STREAM_BATCH, STREAM_NEGATIVES, STREAM_NEIGHBOR_CAP,
                  STREAM_RESERVED, stream)
from .scoring import nsa_loss_batch, rotate_scores, sample_negative_batch
from .serialize import load_checkpoint, save_checkpoint

LOG_HEADER = "step,loss,seconds"


@dataclass
class TrainConfig:
    """Hyperparameters. Reported defaults: lr 0.001, batch 1024, 256
    negatives, k 10, 10% reserved, 2 GNN layers, margin 10 (use 15 for
    very large graphs). dim, alpha, and max_steps are implementation
    choices."""

    dim: int = 100
    k: int = 10
    reserved_fraction: float = 0.10
    reserved_count: int | None = None
    layers: int = 2
    learning_rate: float = 0.001
    batch_size: int = 1024
    n_negatives: int = 256
    gamma: float = 10.0
    alpha: float = 1.0
    max_steps: int = 100_000
    seed: int = 0
    ablation: str = "full"
    max_neighbors: int | None = None
    checkpoint_interval: int = 0
    checkpoint_dtype: str = "float64"

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags.variant(self.ablation)

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.batch_size < 1 or self.n_negatives < 1:
            raise ConfigError("batch_size and n_negatives must be >= 1")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if not 0.0 < self.reserved_fraction <= 1.0:
            raise ConfigError(f"reserved_fraction must be in (0, 1], got {self.reserved_fraction}")
        if self.reserved_count is not None and self.reserved_count < 1:
            raise ConfigError(f"reserved_count must be >= 1, got {self.reserved_count}")
        if self.max_neighbors is not None and self.max_neighbors < 1:
            raise ConfigError(f"max_neighbors must be >= 1, got {self.max_neighbors}")
        self.flags  # raises on an unknown variant name


class Adam:
    """Bias-corrected Adam over a named tensor dict."""

    def __init__(self, params: dict[str, ad.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.values.shape:
                raise ConfigError(f"gradient shape mismatch for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"optimizer.m.{name}"] = self.m[name]
            out[f"optimizer.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.params:
            self.m[name] = np.array(tensors[f"optimizer.m.{name}"])
            self.v[name] = np.array(tensors[f"optimizer.v.{name}"])


@dataclass
class DatasetIndex:
    """Static per-dataset artifacts shared by training and evaluation."""

    features: object = None
    reserved: ReservedSet | None = None
    knn: KnnIndex | None = None


def build_index(kg, config: TrainConfig) -> DatasetIndex:
    """Build the feature/reserved/k-NN artifacts the configured model needs."""
    flags = config.flags
    idx = DatasetIndex()
    if flags.use_conrel or flags.use_knresent:
        idx.features = build_relational_features(kg)
    if flags.use_reserved:
        if config.reserved_count is not None:
            idx.reserved = select_reserved_count(kg.n_entities, config.reserved_count, config.seed)
        else:
            idx.reserved = select_reserved(kg.n_entities, config.reserved_fraction, config.seed)
    if flags.use_knresent:
        idx.knn = KnnIndex.build(idx.features, idx.reserved, config.k)
    return idx


def select_reserved_count(n_entities: int, count: int, seed: int) -> ReservedSet:
    """Reserved set with an explicit size instead of a fraction."""
    if not 1 <= count <= n_entities:
        raise ConfigError(f"reserved count {count} out of range for {n_entities} entities")
    g = stream(seed, STREAM_RESERVED)
    indices = np.sort(g.choice(n_entities, size=count, replace=False))
    mask = np.zeros(n_entities, dtype=bool)
    mask[indices] = True
    return ReservedSet(indices=indices, mask=mask, seed=seed, fraction=count / n_entities)


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]
    log_rows: list[str]
    steps_done: int
    index: DatasetIndex
    context: EncoderContext
    param_count: int
    aborted: bool = False
    abort_reason: str | None = None


def _assemble_scores(params, ctx, kg_train, n_entities, config, step):
    """Sample the step's batch and score positives and negatives."""
    batch_rng = stream(config.seed, STREAM_BATCH, step)
    pick = batch_rng.integers(0, len(kg_train), size=config.batch_size)
    positives = kg_train[pick]
    neg_rng = stream(config.seed, STREAM_NEGATIVES, step)
    batch = sample_negative_batch(positives, config.n_negatives, n_entities, neg_rng)

    step_rng = None
    if config.max_neighbors is not None:
        step_rng = stream(config.seed, STREAM_NEIGHBOR_CAP, step)
    from .encoder import encode_all

    h, rel = encode_all(params, ctx, config.max_neighbors, step_rng)
    pos_scores = rotate_scores(
        ad.gather(h, positives[:, 0]), ad.gather(rel, positives[:, 1]),
        ad.gather(h, positives[:, 2]))
    rel_rep = np.repeat(positives[:, 1], config.n_negatives)
    neg_scores = rotate_scores(
        ad.gather(h, batch.neg_heads.ravel()), ad.gather(rel, rel_rep),
        ad.gather(h, batch.neg_tails.ravel()))
    return pos_scores, neg_scores


def _loss_step(params, ctx, kg_train, n_entities, config, step, fixed_weights=None):
    """One recorded forward pass; returns the scalar loss tensor."""
    pos_scores, neg_scores = _assemble_scores(params, ctx, kg_train, n_entities,
                                              config, step)
    return nsa_loss_batch(pos_scores, neg_scores, config.n_negatives,
                          config.gamma, config.alpha, weights=fixed_weights)


def pinned_loss_fn(params, ctx, kg_train, n_entities, config, step: int = 0):
    """Zero-argument loss closure with self-adversarial weights pinned at the
    current parameter values.

    The training loss detaches those weights, so this closure is the
    function whose true gradient the tape computes; check it with
    ``autodiff.grad_check``.
    """
    from .scoring import adversarial_weights

    _, neg_scores = _assemble_scores(params, ctx, kg_train, n_entities, config, step)
    weights = adversarial_weights(
        neg_scores.values.reshape(config.batch_size, config.n_negatives),
        config.alpha).ravel()

    def f():
        return _loss_step(params, ctx, kg_train, n_entities, config, step,
                          fixed_weights=weights)

    return f


def train(kg, config: TrainConfig, index: DatasetIndex | None = None,
          checkpoint_stem=None, resume_from=None, log_path=None,
          progress_every: int = 0, dataset_meta: dict | None = None) -> TrainResult:
    """Run the optimization loop.

    A non-finite loss aborts the run; the last periodic checkpoint (if
    any) is left in place and the exception carries the failing step.
    """
    config.validate()
    flags = config.flags
    if index is None:
        index = build_index(kg, config)
    n_res = index.reserved.size if index.reserved is not None else 0
    params = ModelParams.init(kg.n_relations, n_res, config.dim, config.layers,
                              flags, config.seed)
    ctx = EncoderContext(kg, index.features, index.knn, index.reserved,
                         flags, config.dim, config.seed)
    adam = Adam(params.named(), config.learning_rate)

    start_step = 0
    if resume_from is not None:
        tensors, meta = load_checkpoint(resume_from)
        for name, t in params.named().items():
            if name not in tensors:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            if tensors[name].shape != t.values.shape:
                raise ConfigError(f"checkpoint tensor {name!r} has shape "
                                  f"{tensors[name].shape}, model needs {t.values.shape}")
            t.values[...] = tensors[name]
        adam.load_state(tensors, int(meta["optimizer_steps"]))
        start_step = int(meta["step"])

    kg_train = np.asarray(kg.train, dtype=np.int64).reshape(-1, 3)
    if len(kg_train) == 0:
        raise ConfigError("cannot train on an empty train split")

    total_params, _ = count_params(kg.n_relations, n_res, config.dim,
                                   config.layers, flags)
    losses: list[float] = []
    log_rows: list[str] = []
    t0 = time.perf_counter()

    def checkpoint(step_done: int) -> None:
        if checkpoint_stem is None:
            return
        meta = {
            "step": step_done,
            "optimizer_steps": adam.t,
            "config": asdict(config),
            "param_count": total_params,
            "dataset": dataset_meta or {},
        }
        tensors = {n: t.values for n, t in params.named().items()}
        tensors.update(adam.state_tensors())
        save_checkpoint(checkpoint_stem, tensors, meta, config.checkpoint_dtype)

    aborted = False
    abort_reason = None
    step = start_step
    try:
        for step in range(start_step, config.max_steps):
            params.zero_grads()
            with ad.Tape() as tape:
                loss = _loss_step(params, ctx, kg_train, kg.n_entities, config, step)
                value = loss.item()
                tape.backward(loss)
            adam.step()
            losses.append(value)
            seconds = time.perf_counter() - t0
            log_rows.append(f"{step},{value!r},{seconds:.3f}")
            if progress_every and (step + 1) % progress_every == 0:
                window = losses[-progress_every:]
                print(f"step {step + 1}/{config.max_steps} "
                      f"loss {np.mean(window):.6f}", flush=True)
            if (config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0
                    and step + 1 < config.max_steps):
                checkpoint(step + 1)
    except NumericalError as e:
        aborted = True
        abort_reason = f"step {step}: {e}"
    else:
        step = config.max_steps
        checkpoint(config.max_steps)

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as f:
            f.write(LOG_HEADER + "\n")
            for row in log_rows:
                f.write(row + "\n")

    result = TrainResult(params=params, losses=losses, log_rows=log_rows,
                         steps_done=step, index=index, context=ctx,
                         param_count=total_params, aborted=aborted,
                         abort_reason=abort_reason)
    if aborted:
        raise NumericalError(
            f"training aborted on non-finite loss ({abort_reason}); "
            f"last periodic checkpoint retained")
    return result


def config_from_dict(d: dict) -> TrainConfig:
    base = TrainConfig()
    fields = {f for f in asdict(base)}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return replace(base, **d)
