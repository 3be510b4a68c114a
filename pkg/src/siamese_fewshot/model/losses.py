"""Contrastive and class-weighted contrastive losses.

Convention: ``y = 0`` for same-class pairs, ``y = 1`` for different-class
pairs.  ``D`` is the Euclidean distance between the two embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .network import NumericFault, Parameters, backward_batch, forward_batch

_DIST_EPS = 1e-12


class LossError(ValueError):
    pass


def distance(e_a, e_b) -> float:
    e_a = np.asarray(e_a, dtype=np.float64)
    e_b = np.asarray(e_b, dtype=np.float64)
    if e_a.shape != e_b.shape:
        raise LossError(f"embedding lengths differ: {e_a.shape} vs {e_b.shape}")
    return float(np.sqrt(np.sum((e_a - e_b) ** 2)))


def contrastive_loss(D: float, y: int, m: float = 1.0) -> float:
    if D < 0:
        raise LossError("distance must be non-negative")
    return (1 - y) * D * D + y * max(0.0, m - D) ** 2


def weighted_contrastive_loss(D: float, y: int, m: float, lambda_a: float, lambda_b: float) -> float:
    return ((lambda_a + lambda_b) / 2) * contrastive_loss(D, y, m)


def contrastive_dloss_dD(D: float, y: int, m: float = 1.0) -> float:
    return (1 - y) * 2 * D - y * 2 * max(0.0, m - D)


def class_weights(counts: Mapping[int, int] | "object") -> dict[int, float]:
    """lambda_c = |T| / (|C| * count_c).  Accepts a Dataset or a class->count mapping."""
    if hasattr(counts, "class_counts"):
        counts = counts.class_counts()
    counts = dict(counts)
    if not counts:
        raise LossError("class_weights needs at least one class")
    if any(c <= 0 for c in counts.values()):
        raise LossError(f"class_weights needs non-empty classes, got {counts}")
    total = sum(counts.values())
    return {c: total / (len(counts) * n) for c, n in counts.items()}


@dataclass
class PairBatch:
    images_a: np.ndarray
    images_b: np.ndarray
    y: np.ndarray
    labels_a: np.ndarray
    labels_b: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def swapped(self) -> "PairBatch":
        return PairBatch(self.images_b, self.images_a, self.y, self.labels_b, self.labels_a)


def pair_weights(batch: PairBatch, weights: Mapping[int, float] | None) -> np.ndarray:
    if weights is None:
        return np.ones(len(batch))
    la = np.array([weights[int(c)] for c in batch.labels_a])
    lb = np.array([weights[int(c)] for c in batch.labels_b])
    return (la + lb) / 2


def batch_loss_from_embeddings(ea, eb, y, margin, w):
    """Mean weighted loss and its gradients w.r.t. both embedding matrices."""
    diff = ea - eb
    d = np.sqrt(np.sum(diff * diff, axis=1))
    hinge = np.maximum(0.0, margin - d)
    per_pair = (1 - y) * d * d + y * hinge * hinge
    n = len(y)
    loss = float(np.sum(w * per_pair) / n)
    # d(D^2)/d(diff) = 2 diff ; d(hinge^2)/d(diff) = -2 hinge diff / D
    inv_d = np.where(d > _DIST_EPS, 1.0 / np.maximum(d, _DIST_EPS), 0.0)
    coef = (1 - y) * 2.0 - y * 2.0 * hinge * inv_d
    g_diff = (w * coef / n)[:, None] * diff
    return loss, per_pair, g_diff, -g_diff


def loss_gradient(batch: PairBatch, params: Parameters, margin: float = 1.0,
                  weights: Mapping[int, float] | None = None):
    """Mean batch loss and exact gradients for every parameter tensor.

    Both branches share one forward pass (a's stacked over b's), so the
    shared weights collect gradient from both sides.
    """
    n = len(batch)
    stacked = np.concatenate([batch.images_a, batch.images_b])
    emb, tape = forward_batch(params, stacked, keep_tape=True)
    ea, eb = emb[:n], emb[n:]
    y = np.asarray(batch.y, dtype=emb.dtype)
    w = pair_weights(batch, weights).astype(emb.dtype)
    loss, per_pair, ga, gb = batch_loss_from_embeddings(ea, eb, y, emb.dtype.type(margin), w)
    if not math.isfinite(loss):
        raise NumericFault("non-finite loss")
    grads = backward_batch(params, tape, np.concatenate([ga, gb]))
    return loss, grads, per_pair
