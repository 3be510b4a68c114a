"""Datasets, manifest loading and the imbalanced few-shot draws.

A manifest is a UTF-8 CSV with a ``path,label,split`` header.  Paths are
resolved relative to the manifest's directory; ``split`` is ``train`` or
``test``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .rng import derive_seed, make_rng

DEFAULT_IMAGE_SIZE = (32, 32)
SPLITS = ("train", "test")


class DataError(ValueError):
    """Raised for malformed manifests, unreadable images and bad datasets."""


class CapacityError(DataError):
    """A draw asks for more samples of a class than the pool holds."""


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    image: np.ndarray
    label: int
    source: str = ""
    split: str = "train"


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    samples: tuple[Sample, ...]
    classes: frozenset[int] = field(default=frozenset())
    image_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not self.classes:
            object.__setattr__(self, "classes", frozenset(s.label for s in samples))
        if self.image_shape is None and samples:
            object.__setattr__(self, "image_shape", tuple(samples[0].image.shape))
        seen = set()
        for s in samples:
            if s.id in seen:
                raise DataError(f"duplicate sample id {s.id!r} in dataset {self.name!r}")
            seen.add(s.id)
            if s.label not in self.classes:
                raise DataError(f"sample {s.id!r} has label {s.label} outside {sorted(self.classes)}")
            if tuple(s.image.shape) != self.image_shape:
                raise DataError(
                    f"sample {s.id!r} has shape {s.image.shape}, expected {self.image_shape}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def images(self, dtype=np.float32) -> np.ndarray:
        if not self.samples:
            shape = self.image_shape or (0, 0, 0)
            return np.zeros((0, *shape), dtype=dtype)
        return np.stack([s.image for s in self.samples]).astype(dtype, copy=False)

    def class_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in sorted(self.classes)}
        for s in self.samples:
            counts[s.label] += 1
        return counts

    def subset(self, indices: Iterable[int], name: str | None = None) -> "Dataset":
        picked = tuple(self.samples[i] for i in indices)
        return Dataset(name or self.name, picked, self.classes, self.image_shape)

    def select_ids(self, ids: Iterable[str], name: str | None = None) -> "Dataset":
        index = {s.id: s for s in self.samples}
        try:
            picked = tuple(index[i] for i in ids)
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]!r} in {self.name!r}") from None
        return Dataset(name or self.name, picked, self.classes, self.image_shape)

    def split(self, which: str) -> "Dataset":
        if which not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {which!r}")
        picked = tuple(s for s in self.samples if s.split == which)
        return Dataset(f"{self.name}/{which}", picked, self.classes, self.image_shape)


class ImbalanceLevel(str, Enum):
    HIGH = "H"
    MEDIUM = "M"
    LOW = "L"
    NONE = "N"

    @property
    def minority_per_100(self) -> int:
        return {"H": 1, "M": 10, "L": 50, "N": 100}[self.value]

    @classmethod
    def parse(cls, token: str) -> "ImbalanceLevel":
        if isinstance(token, cls):
            return token
        text = str(token).strip().upper()
        names = {"HIGH": "H", "MEDIUM": "M", "LOW": "L", "NONE": "N"}
        text = names.get(text, text)
        try:
            return cls(text)
        except ValueError:
            raise DataError(
                f"unknown imbalance level {token!r}; expected one of {{H,M,L,N}}"
            ) from None


@dataclass(frozen=True)
class ImbalanceSpec:
    level: ImbalanceLevel
    majority_count: int = 100
    minority_count: int | None = None

    def __post_init__(self):
        level = ImbalanceLevel.parse(self.level)
        object.__setattr__(self, "level", level)
        if self.minority_count is None:
            object.__setattr__(
                self, "minority_count", level.minority_per_100 * self.majority_count // 100
            )
        if self.majority_count <= 0 or self.minority_count <= 0:
            raise DataError("majority and minority counts must be positive")
        if self.minority_count > self.majority_count:
            raise DataError("minority_count must not exceed majority_count")

    @classmethod
    def from_level(cls, level, majority_count: int = 100) -> "ImbalanceSpec":
        """Minority size scales with the majority size, so H at 300 draws 3."""
        return cls(ImbalanceLevel.parse(level), majority_count)

    def to_dict(self) -> dict:
        return {
            "level": self.level.value,
            "majority_count": self.majority_count,
            "minority_count": self.minority_count,
        }


@dataclass(frozen=True)
class FoldPlan:
    seed: int
    fold_count: int
    spec: ImbalanceSpec
    draws: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    majority_label: int = 0
    minority_label: int = 1

    def fold(self, dataset: Dataset, index: int) -> Dataset:
        majority, minority = self.draws[index]
        return dataset.select_ids(list(majority) + list(minority), name=f"{dataset.name}#fold{index}")

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "fold_count": self.fold_count,
            "spec": self.spec.to_dict(),
            "majority_label": self.majority_label,
            "minority_label": self.minority_label,
            "draws": [{"majority": list(a), "minority": list(b)} for a, b in self.draws],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        doc = json.loads(text)
        spec = doc["spec"]
        return cls(
            seed=doc["seed"],
            fold_count=doc["fold_count"],
            spec=ImbalanceSpec(ImbalanceLevel(spec["level"]), spec["majority_count"], spec["minority_count"]),
            draws=tuple((tuple(d["majority"]), tuple(d["minority"])) for d in doc["draws"]),
            majority_label=doc["majority_label"],
            minority_label=doc["minority_label"],
        )


# --------------------------------------------------------------------------
# images


def _as_raster(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] == 0 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise DataError(f"expected an (H, W, C) raster, got shape {np.shape(image)}")
    return arr


def _resize_axis(n_in: int, n_out: int):
    # half-pixel centres, edges clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def preprocess(image, target: tuple[int, int] = DEFAULT_IMAGE_SIZE) -> np.ndarray:
    """Bilinear resize to ``target`` (height, width) and clamp to [0, 1]."""
    th, tw = int(target[0]), int(target[1])
    if th <= 0 or tw <= 0:
        raise DataError(f"target dims must be positive, got {target}")
    src = _as_raster(image)
    h, w, _ = src.shape
    if (h, w) == (th, tw):
        return np.clip(src, 0.0, 1.0).astype(np.float32)
    r0, r1, fr = _resize_axis(h, th)
    c0, c1, fc = _resize_axis(w, tw)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bottom = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    out = top * (1 - fr) + bottom * fr
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def read_image(path: str | os.PathLike, channels: int = 1) -> np.ndarray:
    """Decode an image file to float values in [0, 1] with ``channels`` channels."""
    with Image.open(path) as img:
        if channels == 1:
            arr = np.asarray(img.convert("L"), dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(img.convert("L") if img.mode in ("L", "I", "I;16", "1", "F") else img.convert("RGB"),
                             dtype=np.float64)
            if arr.ndim == 2:
                arr = arr[:, :, None]
            if arr.shape[2] == 1:
                arr = np.repeat(arr, channels, axis=2)
            elif arr.shape[2] != channels:
                raise DataError(f"cannot map {arr.shape[2]} channels to {channels}")
    return arr / 255.0


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


def load_manifest(
    manifest_path: str | os.PathLike,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    channels: int = 1,
    name: str | None = None,
) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    name = name or manifest_path.stem
    root = manifest_path.parent
    samples = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label", "split"]:
            raise DataError(f"{manifest_path}: header must be 'path,label,split', got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            where = f"{manifest_path}:{row_no}"
            rel = (row["path"] or "").strip()
            img_path = (root / rel) if not os.path.isabs(rel) else Path(rel)
            try:
                label = int(row["label"])
            except (TypeError, ValueError):
                raise DataError(f"{where}: label {row['label']!r} is not an integer") from None
            if label < 0:
                raise DataError(f"{where}: label {label} is negative")
            split = (row["split"] or "").strip()
            if split not in SPLITS:
                raise DataError(f"{where}: split {split!r} not in {SPLITS}")
            if not img_path.is_file():
                raise DataError(f"{where}: image file not found: {img_path}")
            try:
                raw = read_image(img_path, channels)
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from None
            except Exception as exc:
                raise DataError(f"{where}: cannot read image {img_path}: {exc}") from None
            image = preprocess(raw, image_size)
            expected = (int(image_size[0]), int(image_size[1]), channels)
            if image.shape != expected:
                raise DataError(f"{where}: image shape {image.shape} after preprocessing, expected {expected}")
            samples.append(Sample(f"{name}:{rel}", image, label, name, split))
    if not samples:
        raise DataError(f"{manifest_path}: empty dataset")
    return Dataset(name, tuple(samples))


def write_manifest(path: str | os.PathLike, rows: Sequence[tuple[str, int, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        writer.writerows(rows)


# --------------------------------------------------------------------------
# sampling


def majority_minority(dataset: Dataset, majority_label: int | None = None) -> tuple[int, int]:
    counts = dataset.class_counts()
    if len(counts) != 2:
        raise DataError(f"expected exactly 2 classes, dataset {dataset.name!r} has {sorted(counts)}")
    if majority_label is None:
        # larger class is the majority; ties go to the smaller label
        majority_label = min(counts, key=lambda c: (-counts[c], c))
    if majority_label not in counts:
        raise DataError(f"majority label {majority_label} not among {sorted(counts)}")
    minority_label = next(c for c in counts if c != majority_label)
    return majority_label, minority_label


def _draw_ids(dataset: Dataset, spec: ImbalanceSpec, rng: np.random.Generator, majority_label: int | None):
    maj, mino = majority_minority(dataset, majority_label)
    pools = {c: [s.id for s in dataset.samples if s.label == c] for c in (maj, mino)}
    for cls, need in ((maj, spec.majority_count), (mino, spec.minority_count)):
        have = len(pools[cls])
        if have < need:
            raise CapacityError(
                f"class {cls} of {dataset.name!r} has {have} samples, draw needs {need} (short by {need - have})"
            )
    a = rng.choice(len(pools[maj]), size=spec.majority_count, replace=False)
    b = rng.choice(len(pools[mino]), size=spec.minority_count, replace=False)
    return (
        tuple(pools[maj][i] for i in a),
        tuple(pools[mino][i] for i in b),
        maj,
        mino,
    )


def subsample_imbalanced(
    dataset: Dataset, spec: ImbalanceSpec, seed: int, majority_label: int | None = None
) -> Dataset:
    """Draw ``majority_count`` + ``minority_count`` samples without replacement."""
    majority, minority, _, _ = _draw_ids(dataset, spec, make_rng(seed), majority_label)
    return dataset.select_ids(majority + minority)


def make_folds(
    dataset: Dataset,
    spec: ImbalanceSpec,
    fold_count: int = 10,
    seed: int = 0,
    majority_label: int | None = None,
) -> FoldPlan:
    """Independent draws, one per fold; fold ``k`` uses the seed ``derive_seed(seed, k)``."""
    if fold_count <= 0:
        raise DataError("fold_count must be positive")
    draws = []
    maj = mino = None
    for k in range(fold_count):
        a, b, maj, mino = _draw_ids(dataset, spec, make_rng(derive_seed(seed, k)), majority_label)
        draws.append((a, b))
    return FoldPlan(seed, fold_count, spec, tuple(draws), maj, mino)


def mean_ir(class_counts: Mapping | Sequence[int]) -> float:
    """Mean over classes of (largest class count / class count).

    Accepts a ``{class: count}`` mapping or a plain sequence of counts.
    """
    counts = list(class_counts.values()) if isinstance(class_counts, Mapping) else list(class_counts)
    if not counts:
        raise DataError("mean_ir needs at least one class")
    if any(c <= 0 for c in counts):
        raise DataError(f"mean_ir needs positive counts, got {counts}")
    top = max(counts)
    return sum(top / c for c in counts) / len(counts)
