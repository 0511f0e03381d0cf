"""Triple scoring via phase rotation, negative sampling, and the training loss.

Entity rows of width D are read as D/2 complex coordinates (first half
real parts, second half imaginary). A relation row contributes its
first D/2 components as unconstrained rotation phases. The score of
(h, r, t) is the negated Euclidean distance between the rotated head
and the tail, so 0 is the best possible score.

The loss is margin-based logistic scoring with self-adversarial
negative weighting: negatives are re-weighted by a softmax over their
own scores, and those weights are treated as constants in the backward
pass.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit

from . import autodiff as ad
from .errors import ConfigError


def _split_complex(rows, width):
    if width % 2 != 0:
        raise ConfigError(f"entity width must be even to form complex pairs, got {width}")
    d = width // 2
    return ad.slice_cols(rows, 0, d), ad.slice_cols(rows, d, width)


def rotate_scores(h_rows, r_rows, t_rows):
    """Batched score: Tensors of shape (M, D) -> Tensor of shape (M,).

    Differentiable; records onto the active tape.
    """
    width = h_rows.shape[-1] if isinstance(h_rows, ad.Tensor) else np.asarray(h_rows).shape[-1]
    h_re, h_im = _split_complex(h_rows, width)
    t_re, t_im = _split_complex(t_rows, width)
    theta = ad.slice_cols(r_rows, 0, width // 2)
    rc, rs = ad.cos(theta), ad.sin(theta)
    hr_re = ad.sub(ad.mul(h_re, rc), ad.mul(h_im, rs))
    hr_im = ad.add(ad.mul(h_re, rs), ad.mul(h_im, rc))
    diff = ad.concat([ad.sub(hr_re, t_re), ad.sub(hr_im, t_im)])
    return ad.scalar_mul(-1.0, ad.l2_norm(diff))


def rotate_score(h, r, t) -> float:
    """Score one triple from plain 1-D embedding rows."""
    h = np.asarray(h, dtype=np.float64)[None, :]
    r = np.asarray(r, dtype=np.float64)[None, :]
    t = np.asarray(t, dtype=np.float64)[None, :]
    return float(rotate_scores(h, r, t).values[0])


@dataclass
class Batch:
    """One training batch: positives plus n corruptions per positive.

    neg_heads/neg_tails give the (B, n) entity indices after corruption;
    head_corrupted marks which slot was replaced.
    """

    positives: np.ndarray
    neg_heads: np.ndarray
    neg_tails: np.ndarray
    head_corrupted: np.ndarray

    @property
    def n_negatives(self) -> int:
        return self.neg_heads.shape[1]


def sample_negative_batch(positives: np.ndarray, n: int, n_entities: int,
                          rng: np.random.Generator) -> Batch:
    """Corrupt each positive n times.

    Each negative independently replaces the head or the tail (equal
    probability) with an entity drawn uniformly from the full
    vocabulary. No filtering against known true triples; the filtered
    protocol applies at evaluation only.
    """
    if n < 1:
        raise ConfigError(f"need at least one negative per positive, got {n}")
    positives = np.asarray(positives, dtype=np.int64)
    b = positives.shape[0]
    head_corrupted = rng.random((b, n)) < 0.5
    replacements = rng.integers(0, n_entities, size=(b, n), dtype=np.int64)
    neg_heads = np.where(head_corrupted, replacements, positives[:, 0:1])
    neg_tails = np.where(head_corrupted, positives[:, 2:3], replacements)
    return Batch(positives=positives, neg_heads=neg_heads, neg_tails=neg_tails,
                 head_corrupted=head_corrupted)


def sample_negatives(positive, n: int, n_entities: int, rng: np.random.Generator):
    """Single-positive convenience wrapper: n (head, relation, tail) triples
    plus 'head'/'tail' mode tags."""
    batch = sample_negative_batch(np.asarray([positive]), n, n_entities, rng)
    r = positive[1]
    triples = [(int(h), int(r), int(t)) for h, t in zip(batch.neg_heads[0], batch.neg_tails[0])]
    modes = ["head" if c else "tail" for c in batch.head_corrupted[0]]
    return triples, modes


def adversarial_weights(neg_scores, alpha: float) -> np.ndarray:
    """Softmax of alpha * score along the last axis, max-subtracted.

    Plain numpy on detached values: these weights carry no gradient.
    """
    s = np.asarray(neg_scores, dtype=np.float64) * float(alpha)
    z = np.exp(s - s.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def nsa_loss(pos_score: float, neg_scores, gamma: float, alpha: float) -> float:
    """Reference scalar loss for one positive and its negatives.

    L = -log sigmoid(gamma + pos) - sum_i p_i * log sigmoid(-gamma - neg_i)
    with p the self-adversarial weights.
    """
    if gamma <= 0:
        raise ConfigError(f"margin must be positive, got {gamma}")
    neg = np.asarray(neg_scores, dtype=np.float64)
    p = adversarial_weights(neg, alpha)
    return float(-log_expit(gamma + pos_score) - np.sum(p * log_expit(-gamma - neg)))


def nsa_loss_batch(pos_scores: ad.Tensor, neg_scores: ad.Tensor, n_negatives: int,
                   gamma: float, alpha: float, weights=None) -> ad.Tensor:
    """Differentiable batch loss: mean over positives.

    neg_scores is flat of length B * n, grouped per positive. The
    adversarial weights are computed from its detached values; no
    gradient flows through them. Pass precomputed ``weights`` to pin
    them (gradient checking differentiates the loss at fixed weights,
    which is exactly what the detachment makes the tape compute).
    """
    if gamma <= 0:
        raise ConfigError(f"margin must be positive, got {gamma}")
    b = pos_scores.shape[0]
    if weights is None:
        weights = adversarial_weights(neg_scores.values.reshape(b, n_negatives), alpha).ravel()
    else:
        weights = np.asarray(weights, dtype=np.float64).ravel()
    pos_term = ad.tensor_sum(ad.log(ad.sigmoid(ad.add(pos_scores, gamma))))
    neg_logsig = ad.log(ad.sigmoid(ad.scalar_mul(-1.0, ad.add(neg_scores, gamma))))
    neg_term = ad.tensor_sum(ad.mul(neg_logsig, weights))
    return ad.scalar_mul(-1.0 / b, ad.add(pos_term, neg_term))
