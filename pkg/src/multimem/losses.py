"""Training objectives and their analytic gradients.

Each loss returns its value together with gradients with respect to the
*inputs it supervises*: query embeddings for the memory-based losses,
logits for the source classifier. Memory slots are constants everywhere;
the running-average write is their only update path. Neighbor selections
and (rectified) weights are likewise treated as fixed inputs: no gradient
flows through the part-read rectification path.

Batch terms are means, not sums, so the mixing coefficients keep their
meaning across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_math import minmax_normalize
from .errors import (
    EmptyBatchError,
    InvalidLabelError,
    NonPositiveProbabilityError,
)
from .reciprocal import NeighborSelection

PROB_FLOOR = 1e-300


@dataclass
class LossReport:
    """Per-batch loss components; ``l_domain`` already includes the triplet
    term, and ``total = (1 - lam) * l_source + lam * (l_instance + beta * l_domain)``."""

    l_source: float
    l_instance: float
    l_domain: float
    l_triplet: float
    total: float


def rectify_weights(
    weights: np.ndarray,
    p_pu: np.ndarray,
    p_pb: np.ndarray,
    selection: NeighborSelection,
    gamma: float,
) -> np.ndarray:
    """Blend part-level evidence into neighbor weights.

    Both part reads are min-max normalized over all N slots first, then each
    selected neighbor's weight becomes
    ``(1 - gamma) * w + gamma * (p_hat_upper + p_hat_bottom)``.
    Outputs therefore lie in [0, 2].
    """
    phat_u = minmax_normalize(p_pu)
    phat_b = minmax_normalize(p_pb)
    idx = selection.indices
    return (1.0 - gamma) * np.asarray(weights, dtype=np.float64) + gamma * (
        phat_u[idx] + phat_b[idx]
    )


def instance_loss(
    probs: np.ndarray,
    selections: Sequence[NeighborSelection],
    weights: Sequence[np.ndarray],
    slots: np.ndarray,
    alpha1: float,
) -> tuple[float, np.ndarray]:
    """Weighted negative log-likelihood of each query over its neighbor set.

    ``probs[i]`` is the instance-bank read for query i (length N), and the
    loss is the batch mean of ``-sum_j w_ij * log probs[i, j]`` over the
    selected j. The gradient is taken with respect to each query embedding,
    with slots and weights held constant: for read scores z = slots @ f / a,
    d/dz of the i-th term is ``(sum_j w_ij) * probs[i] - scatter(w_i)``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    b, n = probs.shape
    if b == 0:
        raise EmptyBatchError("instance loss over an empty batch")
    grads = np.zeros((b, slots.shape[1]), dtype=np.float64)
    total = 0.0
    for i in range(b):
        idx = selections[i].indices
        w = np.asarray(weights[i], dtype=np.float64)
        p_sel = probs[i, idx]
        if np.any(p_sel < PROB_FLOOR):
            raise NonPositiveProbabilityError(
                f"read probability underflow for query {selections[i].query}"
            )
        total += -float(np.dot(w, np.log(p_sel)))
        grad_z = w.sum() * probs[i]
        np.subtract.at(grad_z, idx, w)
        grads[i] = slots.T @ grad_z / alpha1
    return total / b, grads / b


def batch_hard_triplet(
    embeddings: np.ndarray, labels: np.ndarray, margin: float
) -> tuple[float, np.ndarray]:
    """Batch-hard triplet loss on Euclidean distances.

    Per anchor: hardest positive = max distance among same-label samples,
    hardest negative = min distance among different-label samples, hinge
    ``max(0, margin + dp - dn)``. Anchors lacking a positive or a negative
    are skipped; the loss is the mean over the remaining anchors (0 if none
    qualify). Gradients flow to anchor, hardest positive and hardest
    negative through the selected pair only.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    b = embeddings.shape[0]
    grads = np.zeros_like(embeddings)
    if b == 0:
        return 0.0, grads

    diff = embeddings[:, None, :] - embeddings[None, :, :]
    dist = np.sqrt(np.maximum(np.sum(diff * diff, axis=2), 0.0))
    same = labels[:, None] == labels[None, :]

    total = 0.0
    valid = 0
    for a in range(b):
        pos_mask = same[a].copy()
        pos_mask[a] = False
        neg_mask = ~same[a]
        if not pos_mask.any() or not neg_mask.any():
            continue
        valid += 1
        pos_idx = np.nonzero(pos_mask)[0]
        neg_idx = np.nonzero(neg_mask)[0]
        p = pos_idx[np.argmax(dist[a, pos_idx])]
        q = neg_idx[np.argmin(dist[a, neg_idx])]
        hinge = margin + dist[a, p] - dist[a, q]
        if hinge <= 0.0:
            continue
        total += hinge
        if dist[a, p] > 0.0:
            u_p = (embeddings[a] - embeddings[p]) / dist[a, p]
            grads[a] += u_p
            grads[p] -= u_p
        if dist[a, q] > 0.0:
            u_q = (embeddings[a] - embeddings[q]) / dist[a, q]
            grads[a] -= u_q
            grads[q] += u_q
    if valid == 0:
        return 0.0, grads
    return total / valid, grads / valid


def domain_loss(
    probs: np.ndarray,
    labels: np.ndarray,
    embeddings: np.ndarray,
    margin: float,
    slots: np.ndarray,
    alpha1: float,
) -> tuple[float, float, np.ndarray]:
    """Pseudo-class cross-entropy plus batch-hard triplet.

    ``probs[i]`` is the domain-bank read of sample i and ``labels[i]`` its
    pseudo class (noise samples must be excluded by the caller). Returns
    ``(ce + triplet, triplet, gradients)`` with gradients with respect to
    the embeddings, slots held constant.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    b = probs.shape[0]
    if b == 0:
        raise EmptyBatchError("domain loss over an empty batch")
    if np.any(labels < 0) or np.any(labels >= slots.shape[0]):
        raise InvalidLabelError("pseudo class outside the domain bank")

    p_true = probs[np.arange(b), labels]
    if np.any(p_true < PROB_FLOOR):
        raise NonPositiveProbabilityError("domain read probability underflow")
    ce = -float(np.mean(np.log(p_true)))
    grad_z = probs.copy()
    grad_z[np.arange(b), labels] -= 1.0
    ce_grads = grad_z @ slots / alpha1 / b

    tri, tri_grads = batch_hard_triplet(embeddings, labels, margin)
    return ce + tri, tri, ce_grads + tri_grads


def source_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    b, num_classes = logits.shape
    if b == 0:
        raise EmptyBatchError("source loss over an empty batch")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise InvalidLabelError(
            f"labels must be in [0, {num_classes}), got {labels.min()}..{labels.max()}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), labels]))
    softmaxed = np.exp(shifted - log_z[:, None])
    softmaxed[np.arange(b), labels] -= 1.0
    return loss, softmaxed / b


def total_loss(
    l_source: float,
    l_instance: float,
    l_domain: float,
    l_triplet: float,
    lam: float,
    beta: float,
) -> LossReport:
    """Combine per-batch components into the joint objective."""
    total = (1.0 - lam) * l_source + lam * (l_instance + beta * l_domain)
    return LossReport(
        l_source=l_source,
        l_instance=l_instance,
        l_domain=l_domain,
        l_triplet=l_triplet,
        total=total,
    )
