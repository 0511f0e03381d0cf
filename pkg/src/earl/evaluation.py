"""Filtered link-prediction ranking and the comparison harnesses.

Every evaluable triple is queried twice: once with the tail replaced by
all entities, once with the head replaced. Candidates that would form a
different known-true triple (over train + valid + test) are removed
before ranking. Exact score ties resolve to the mean rank of the tied
block, which keeps reports deterministic and unbiased.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .encoder import ABLATION_ORDER, count_params, encode_all
from .errors import ConfigError

HITS_LEVELS = (1, 3, 10)


@dataclass
class EvalReport:
    """Link-prediction quality plus the parameter-efficiency summary."""

    mrr: float
    hits: dict[int, float]
    param_count: int
    skipped_triples: int
    n_queries: int
    split: str
    config: dict

    @property
    def effi(self) -> float:
        """MRR per million parameters."""
        return self.mrr / (self.param_count / 1e6)

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
            "param_count": self.param_count,
            "effi": self.effi,
            "skipped_triples": self.skipped_triples,
            "n_queries": self.n_queries,
            "split": self.split,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_filter_sets(kg):
    """known-true lookups over train + valid + test.

    Returns (tails_by_hr, heads_by_rt): dict keyed by the fixed slots,
    values are entity index arrays.
    """
    tails: dict[tuple[int, int], list[int]] = {}
    heads: dict[tuple[int, int], list[int]] = {}
    for split in (kg.train, kg.valid, kg.test):
        for h, r, t in split:
            tails.setdefault((h, r), []).append(t)
            heads.setdefault((r, t), []).append(h)
    tails_np = {k: np.unique(np.asarray(v, dtype=np.int64)) for k, v in tails.items()}
    heads_np = {k: np.unique(np.asarray(v, dtype=np.int64)) for k, v in heads.items()}
    return tails_np, heads_np


def score_candidates(triple, direction: str, entity_rows: np.ndarray,
                     relation_rows: np.ndarray) -> np.ndarray:
    """Scores of every entity substituted into the query slot.

    Mirrors the training-side rotation arithmetic term for term so that
    ranking and loss see identical numbers.
    """
    h, r, t = triple
    d = entity_rows.shape[1] // 2
    theta = relation_rows[r, :d]
    rc, rs = np.cos(theta), np.sin(theta)
    if direction == "tail":
        h_re, h_im = entity_rows[h, :d], entity_rows[h, d:]
        rot_re = h_re * rc - h_im * rs
        rot_im = h_re * rs + h_im * rc
        diff_re = rot_re[None, :] - entity_rows[:, :d]
        diff_im = rot_im[None, :] - entity_rows[:, d:]
    elif direction == "head":
        rot_re = entity_rows[:, :d] * rc[None, :] - entity_rows[:, d:] * rs[None, :]
        rot_im = entity_rows[:, :d] * rs[None, :] + entity_rows[:, d:] * rc[None, :]
        diff_re = rot_re - entity_rows[t, :d][None, :]
        diff_im = rot_im - entity_rows[t, d:][None, :]
    else:
        raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")
    diff = np.concatenate([diff_re, diff_im], axis=1)
    return -np.sqrt(np.sum(diff * diff, axis=1))


def rank_triple(triple, direction: str, entity_rows: np.ndarray,
                relation_rows: np.ndarray, filter_sets) -> int:
    """Filtered rank of the true entity for one query direction.

    rank = 1 + (# strictly better) + floor(# exactly tied / 2), counted
    after removing candidates that form other known-true triples.
    """
    tails_by_hr, heads_by_rt = filter_sets
    h, r, t = triple
    scores = score_candidates(triple, direction, entity_rows, relation_rows)
    if direction == "tail":
        true_entity = t
        known = tails_by_hr.get((h, r))
    else:
        true_entity = h
        known = heads_by_rt.get((r, t))
    true_score = scores[true_entity]
    removed = np.zeros(len(scores), dtype=bool)
    if known is not None:
        removed[known] = True
    removed[true_entity] = False
    higher = int(np.sum((scores > true_score) & ~removed))
    tied = int(np.sum((scores == true_score) & ~removed)) - 1  # the query itself ties
    return 1 + higher + tied // 2


def evaluate_embeddings(kg, entity_rows: np.ndarray, relation_rows: np.ndarray,
                        split: str, param_count: int, config: dict | None = None,
                        filter_sets=None) -> EvalReport:
    """Rank every evaluable triple of the split in both directions."""
    from .kg import filter_evaluable

    triples, skipped = filter_evaluable(kg, split)
    if filter_sets is None:
        filter_sets = build_filter_sets(kg)
    reciprocal = 0.0
    hit_counts = {k: 0 for k in HITS_LEVELS}
    n_queries = 0
    for triple in triples:
        for direction in ("tail", "head"):
            rank = rank_triple(triple, direction, entity_rows, relation_rows, filter_sets)
            reciprocal += 1.0 / rank
            for k in HITS_LEVELS:
                if rank <= k:
                    hit_counts[k] += 1
            n_queries += 1
    if n_queries == 0:
        raise ConfigError(f"split {split!r} has no evaluable triples")
    return EvalReport(
        mrr=reciprocal / n_queries,
        hits={k: hit_counts[k] / n_queries for k in HITS_LEVELS},
        param_count=param_count,
        skipped_triples=skipped,
        n_queries=n_queries,
        split=split,
        config=config or {},
    )


def evaluate_model(kg, params, ctx, split: str, config: dict | None = None) -> EvalReport:
    """Encode all entities/relations with the trained parameters, then rank."""
    h, rel = encode_all(params, ctx)
    n_res = params.e_res.values.shape[0] if params.e_res is not None else 0
    total, _ = count_params(params.n_relations, n_res, params.dim,
                            params.n_layers, params.flags)
    return evaluate_embeddings(kg, h.values, rel.values, split, total, config)


def run_ablations(kg, base_config, split: str = "test", progress_every: int = 0):
    """Train and evaluate the full model plus the five ablated variants.

    Returns {variant: EvalReport} in the canonical table order. All
    variants share the base seed, so the reserved set (where present)
    is identical across rows.
    """
    from .training import train

    reports: dict[str, EvalReport] = {}
    for variant in ABLATION_ORDER:
        config = replace(base_config, ablation=variant)
        result = train(kg, config, progress_every=progress_every)
        echo = {"ablation": variant, "dim": config.dim, "seed": config.seed}
        reports[variant] = evaluate_model(kg, result.params, result.context, split, echo)
    return reports


def ablation_table(reports: dict) -> str:
    """Fixed-width text table over the canonical row order."""
    lines = [f"{'variant':<22} {'params':>10} {'MRR':>8} {'Hits@10':>8} {'Effi':>8}"]
    for variant in ABLATION_ORDER:
        if variant not in reports:
            continue
        r = reports[variant]
        lines.append(f"{variant:<22} {r.param_count:>10} {r.mrr:>8.4f} "
                     f"{r.hits[10]:>8.4f} {r.effi:>8.4f}")
    return "\n".join(lines)


def budget_sweep(kg, budget: int, grid, base_config, tolerance: float = 0.05,
                 split: str = "test", progress_every: int = 0):
    """Train each (dim, reserved_count) grid point that fits the budget.

    Points whose full-model parameter count strays more than
    ``tolerance`` from the budget are rejected up front. Returns
    (rows, rejected): rows are (dim, reserved_count, param_count, mrr),
    rejected are (dim, reserved_count, param_count, message).
    """
    from .training import train

    if budget < 1:
        raise ConfigError(f"budget must be positive, got {budget}")
    rows, rejected = [], []
    for dim, reserved_count in grid:
        total, _ = count_params(kg.n_relations, reserved_count, dim,
                                base_config.layers, base_config.flags)
        deviation = abs(total - budget) / budget
        if deviation > tolerance:
            rejected.append((dim, reserved_count, total,
                             f"parameter count {total} deviates "
                             f"{deviation:.1%} from budget {budget} "
                             f"(limit {tolerance:.0%})"))
            continue
        config = replace(base_config, dim=dim, reserved_count=reserved_count)
        result = train(kg, config, progress_every=progress_every)
        report = evaluate_model(kg, result.params, result.context, split,
                                {"dim": dim, "reserved_count": reserved_count})
        rows.append((dim, reserved_count, total, report.mrr))
    return rows, rejected
