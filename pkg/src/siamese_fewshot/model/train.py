"""Siamese training and plain classifier (softmax head) training."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..augment import AugmentConfig, random_augment
from ..data import Dataset
from ..pairing import DatasetView, PairingConfig, balance_by_oversampling, iter_batches, sample_pairs
from ..rng import make_rng
from . import layers as L
from .losses import PairBatch, class_weights, loss_gradient
from .network import NumericFault, Parameters, backward_batch, embed, forward_batch
from .optim import SGDState, learning_rate, nesterov_update, sgd_step

log = logging.getLogger(__name__)

LOSSES = ("plain", "weighted")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-2
    momentum: float = 0.9
    decay: float = 1e-6
    margin: float = 1.0
    loss: str = "plain"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _gather(images, positions, view_indices, augment: AugmentConfig, rng):
    out = images[view_indices[positions]]
    if augment.is_identity:
        return out
    return np.stack([random_augment(img, augment, rng) for img in out]).astype(images.dtype, copy=False)


def train_siamese(
    dataset: Dataset,
    pairing: PairingConfig,
    augment: AugmentConfig,
    config: TrainConfig,
    init: Parameters,
    history_callback=None,
) -> tuple[Parameters, list[float]]:
    """Train the shared backbone on pair streams.  Returns final parameters and per-epoch mean loss."""
    if config.epochs == 0:
        return init, []
    if len(dataset) < 2:
        raise TrainingError("training needs at least 2 samples")
    rng = make_rng(config.seed, "siamese")
    # weights come from the draw itself, before any oversampling
    weights = class_weights(dataset) if config.loss == "weighted" else None
    view = balance_by_oversampling(dataset, rng) if pairing.balanced_sampling else DatasetView.full(dataset)
    dtype = init.dtype
    images = dataset.images(dtype)
    labels = dataset.labels
    params = init
    state = SGDState()
    history = []
    for epoch in range(config.epochs):
        pairs = sample_pairs(view, pairing, rng)
        total, count = 0.0, 0
        for b, chunk in enumerate(iter_batches(pairs, config.batch_size)):
            ia = np.array([p.ia for p in chunk])
            ib = np.array([p.ib for p in chunk])
            batch = PairBatch(
                _gather(images, ia, view.indices, augment, rng),
                _gather(images, ib, view.indices, augment, rng),
                np.array([p.y for p in chunk]),
                labels[view.indices[ia]],
                labels[view.indices[ib]],
            )
            try:
                loss, grads, _ = loss_gradient(batch, params, config.margin, weights)
            except NumericFault as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            params = sgd_step(params, grads, config, state)
            total += loss * len(chunk)
            count += len(chunk)
        history.append(total / count)
        if history_callback is not None:
            history_callback(epoch, history[-1])
        log.debug("epoch %d mean loss %.6f", epoch, history[-1])
    return params, history


@dataclass(frozen=True, eq=False)
class ClassifierHead:
    weight: np.ndarray
    bias: np.ndarray
    classes: tuple[int, ...]


def train_classifier(
    dataset: Dataset,
    init: Parameters,
    config: TrainConfig,
) -> tuple[Parameters, ClassifierHead, list[float]]:
    """Backbone plus a linear softmax head, trained with cross-entropy."""
    classes = tuple(sorted(dataset.classes))
    if len(classes) < 2:
        raise TrainingError("classifier training needs at least 2 classes")
    rng = make_rng(config.seed, "classifier")
    dtype = init.dtype
    n_dim = init.config.embedding_dim
    limit = np.sqrt(3.0 / n_dim)
    head_w = rng.uniform(-limit, limit, size=(n_dim, len(classes))).astype(dtype)
    head_b = np.zeros(len(classes), dtype=dtype)
    if config.epochs == 0:
        return init, ClassifierHead(head_w, head_b, classes), []
    index = {c: i for i, c in enumerate(classes)}
    images = dataset.images(dtype)
    targets = np.array([index[c] for c in dataset.labels])
    params = init
    state = SGDState()
    vw = np.zeros_like(head_w)
    vb = np.zeros_like(head_b)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start: start + config.batch_size]
            try:
                emb, tape = forward_batch(params, images[idx], keep_tape=True)
                logits, cache = L.dense_forward(emb, head_w, head_b)
                loss, g_logits = L.softmax_xent(logits, targets[idx])
                g_emb, g_hw, g_hb = L.dense_backward(g_logits, head_w, cache, True)
                grads = backward_batch(params, tape, g_emb)
            except NumericFault as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            lr = dtype.type(learning_rate(config.learning_rate, config.decay, state.step))
            mu = dtype.type(config.momentum)
            head_w, vw = nesterov_update(head_w, g_hw, vw, lr, mu)
            head_b, vb = nesterov_update(head_b, g_hb, vb, lr, mu)
            params = sgd_step(params, grads, config, state)
            total += loss * len(idx)
        history.append(total / len(order))
    return params.replace(source="pretrained"), ClassifierHead(head_w, head_b, classes), history


def predict_with_head(params: Parameters, head: ClassifierHead, images: np.ndarray) -> np.ndarray:
    logits = embed(params, images) @ head.weight + head.bias
    return np.array(head.classes)[np.argmax(logits, axis=1)]


def pretrain_classifier(dataset: Dataset, init: Parameters, config: TrainConfig) -> Parameters:
    """Classifier pre-training; the head is discarded and the backbone tagged ``pretrained``."""
    params, _, _ = train_classifier(dataset, init, config)
    return params
