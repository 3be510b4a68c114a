"""Pair construction for Siamese training.

``y = 0`` marks a same-class ("positive") pair and ``y = 1`` a
different-class ("negative") pair, so the margin term of the contrastive
loss acts on different-class pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterator

import numpy as np

from .data import DataError, Dataset, majority_minority

SAME, DIFFERENT = 0, 1
RATIO_GRID = ((5, 1), (3, 2), (1, 1), (2, 3), (1, 5))


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class Pair:
    a: str
    b: str
    y: int
    # positions in the (possibly oversampled) view; distinct even when a == b
    ia: int = -1
    ib: int = -1


@dataclass(frozen=True)
class PairingConfig:
    ratio_pos: int = 1
    ratio_neg: int = 1
    balanced_sampling: bool = False
    pairs_per_epoch: int | None = None

    def __post_init__(self):
        if self.ratio_pos <= 0 or self.ratio_neg <= 0:
            raise PairingError(f"ratio terms must be positive, got {self.ratio_pos}:{self.ratio_neg}")
        if self.pairs_per_epoch is not None and self.pairs_per_epoch < self.ratio_pos + self.ratio_neg:
            raise PairingError("pairs_per_epoch must be at least ratio_pos + ratio_neg")

    @classmethod
    def parse_ratio(cls, text: str) -> tuple[int, int]:
        try:
            p, n = (int(t) for t in str(text).split(":"))
        except ValueError:
            raise PairingError(f"ratio must look like 'P:N', got {text!r}") from None
        return p, n

    @property
    def ratio(self) -> str:
        return f"{self.ratio_pos}:{self.ratio_neg}"

    def epoch_pairs(self, view_size: int) -> int:
        if self.pairs_per_epoch is not None:
            return self.pairs_per_epoch
        return max(2 * view_size, self.ratio_pos + self.ratio_neg)


@dataclass(frozen=True, eq=False)
class DatasetView:
    """A dataset plus an index list; oversampling repeats indices, never images."""

    dataset: Dataset
    indices: np.ndarray

    @classmethod
    def full(cls, dataset: Dataset) -> "DatasetView":
        return cls(dataset, np.arange(len(dataset)))

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]

    def sample(self, position: int):
        return self.dataset.samples[int(self.indices[position])]

    def class_counts(self) -> dict[int, int]:
        labels = self.labels
        return {c: int(np.sum(labels == c)) for c in sorted(self.dataset.classes)}


def _as_view(data) -> DatasetView:
    return data if isinstance(data, DatasetView) else DatasetView.full(data)


def enumerate_pairs(dataset: Dataset) -> list[Pair]:
    """Every unordered pair: same-class pairs get y=0, cross-class pairs y=1."""
    if len(dataset) < 2:
        raise PairingError("need at least 2 samples to form a pair")
    out = []
    for i, j in combinations(range(len(dataset)), 2):
        si, sj = dataset.samples[i], dataset.samples[j]
        out.append(Pair(si.id, sj.id, SAME if si.label == sj.label else DIFFERENT, i, j))
    return out


def imbalance_ratio(data) -> float:
    """Minority count over majority count, in (0, 1]."""
    counts = _as_view(data).class_counts()
    if len(counts) != 2:
        raise DataError(f"imbalance_ratio needs exactly 2 classes, got {sorted(counts)}")
    lo, hi = sorted(counts.values())
    if lo == 0:
        raise DataError("imbalance_ratio is undefined with an empty class")
    return lo / hi


def balance_by_oversampling(dataset: Dataset, rng: np.random.Generator) -> DatasetView:
    """Repeat minority indices until both classes have the majority's count.

    Each minority sample is repeated ``need // n_min`` times; the remaining
    ``need % n_min`` copies are drawn without replacement.
    """
    maj, mino = majority_minority(dataset)
    labels = dataset.labels
    maj_idx = np.flatnonzero(labels == maj)
    min_idx = np.flatnonzero(labels == mino)
    if len(min_idx) == 0:
        raise DataError("cannot oversample an empty minority class")
    need = len(maj_idx)
    if len(min_idx) == need:
        return DatasetView.full(dataset)
    reps, rest = divmod(need, len(min_idx))
    extra = rng.choice(min_idx, size=rest, replace=False) if rest else np.empty(0, dtype=np.int64)
    minority = np.concatenate([np.tile(min_idx, reps), np.sort(extra)])
    return DatasetView(dataset, np.concatenate([maj_idx, minority]).astype(np.int64))


def pair_counts(n_pairs: int, ratio_pos: int, ratio_neg: int) -> tuple[int, int]:
    """Split ``n_pairs`` by the ratio, rounding the same-class share to nearest (halves up).

    This keeps ``|pos * ratio_neg - neg * ratio_pos| <= (ratio_pos + ratio_neg) / 2``.
    """
    total = ratio_pos + ratio_neg
    pos = (2 * n_pairs * ratio_pos + total) // (2 * total)
    return pos, n_pairs - pos


def sample_pairs(data, config: PairingConfig, rng: np.random.Generator) -> list[Pair]:
    """One epoch of pairs with the configured same:different composition.

    ``data`` is a Dataset or a DatasetView.  With ``balanced_sampling`` a
    Dataset is oversampled first.  Pairs are drawn with replacement and the
    stream is shuffled.
    """
    if isinstance(data, Dataset) and config.balanced_sampling:
        view = balance_by_oversampling(data, rng)
    else:
        view = _as_view(data)
    labels = view.labels
    n = len(view)
    n_pos, n_neg = pair_counts(config.epoch_pairs(n), config.ratio_pos, config.ratio_neg)

    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    pos_pool = np.concatenate([idx for idx in by_class.values() if len(idx) >= 2] or [np.empty(0, np.int64)])
    if n_pos and len(pos_pool) == 0:
        raise PairingError("same-class pairs requested but no class has 2 samples")
    if n_neg and len(by_class) < 2:
        raise PairingError("different-class pairs requested but only one class is present")

    firsts = np.empty(n_pos + n_neg, dtype=np.int64)
    seconds = np.empty(n_pos + n_neg, dtype=np.int64)
    for k in range(n_pos):
        i = pos_pool[rng.integers(len(pos_pool))]
        same = by_class[labels[i]]
        j = same[rng.integers(len(same) - 1)]
        if j == i:  # skip self: shift to the last member
            j = same[-1]
        firsts[k], seconds[k] = i, j
    for k in range(n_pos, n_pos + n_neg):
        i = rng.integers(n)
        other = np.flatnonzero(labels != labels[i])
        firsts[k], seconds[k] = i, other[rng.integers(len(other))]

    order = rng.permutation(n_pos + n_neg)
    pairs = []
    for k in order:
        i, j = int(firsts[k]), int(seconds[k])
        si, sj = view.sample(i), view.sample(j)
        pairs.append(Pair(si.id, sj.id, SAME if si.label == sj.label else DIFFERENT, i, j))
    return pairs


def iter_batches(pairs: list[Pair], batch_size: int) -> Iterator[list[Pair]]:
    for start in range(0, len(pairs), batch_size):
        yield pairs[start: start + batch_size]
