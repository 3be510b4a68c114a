"""Synthetic two-class image corpus for smoke tests and desk-scale runs.

Class 0 draws a bright Gaussian blob on a mid-grey background, class 1 a dark
ring.  Both get additive Gaussian noise and a small random centre offset.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .data import Dataset, Sample, write_image, write_manifest
from .rng import make_rng


def blob_image(rng: np.random.Generator, size: int = 32, noise: float = 0.25) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = (size - 1) / 2 + rng.uniform(-size / 8, size / 8, size=2)
    sigma = rng.uniform(0.12, 0.2) * size
    img = 0.35 + 0.55 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0, 1)[:, :, None]


def ring_image(rng: np.random.Generator, size: int = 32, noise: float = 0.25) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = (size - 1) / 2 + rng.uniform(-size / 8, size / 8, size=2)
    radius = rng.uniform(0.22, 0.32) * size
    width = rng.uniform(0.05, 0.08) * size
    r = np.hypot(yy - cy, xx - cx)
    img = 0.55 - 0.45 * np.exp(-((r - radius) ** 2) / (2 * width**2))
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0, 1)[:, :, None]


def make_synthetic_dataset(
    name: str = "synthetic",
    train_counts: tuple[int, int] = (300, 300),
    test_counts: tuple[int, int] = (100, 100),
    size: int = 32,
    noise: float = 0.25,
    seed: int = 0,
) -> Dataset:
    """In-memory corpus; label 0 is the blob class, label 1 the ring class."""
    rng = make_rng(seed, "synthetic", name)
    makers = (blob_image, ring_image)
    samples = []
    for split, counts in (("train", train_counts), ("test", test_counts)):
        for label, count in enumerate(counts):
            for i in range(count):
                img = makers[label](rng, size, noise).astype(np.float32)
                samples.append(Sample(f"{name}:{split}/{label}/{i:05d}", img, label, name, split))
    return Dataset(name, tuple(samples))


def write_synthetic_corpus(
    out_dir: str | os.PathLike,
    name: str = "synthetic",
    train_counts: tuple[int, int] = (300, 300),
    test_counts: tuple[int, int] = (100, 100),
    size: int = 32,
    noise: float = 0.25,
    seed: int = 0,
) -> Path:
    """Write PNGs plus ``manifest.csv`` under ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    ds = make_synthetic_dataset(name, train_counts, test_counts, size, noise, seed)
    rows = []
    for s in ds.samples:
        rel = Path(s.split) / str(s.label) / (s.id.rsplit("/", 1)[-1] + ".png")
        (out / rel.parent).mkdir(parents=True, exist_ok=True)
        write_image(out / rel, s.image)
        rows.append((rel.as_posix(), s.label, s.split))
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
