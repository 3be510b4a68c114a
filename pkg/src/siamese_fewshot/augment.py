"""Shape-preserving augmentation: shift, scale and rotate.

Flips are deliberately absent.  All transforms keep the raster shape, fill
exposed regions with 0 and never leave [0, 1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

MAX_ALPHA = 45.0
_SNAP = 1e-9

__all__ = ["AugmentConfig", "AugmentError", "shift", "scale", "rotate", "random_augment", "sample_params"]


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.0
    enable_shift: bool = True
    enable_scale: bool = True
    enable_rotate: bool = True

    def __post_init__(self):
        if not 0.0 <= float(self.alpha) <= MAX_ALPHA:
            raise AugmentError(f"alpha must lie in [0, {MAX_ALPHA}], got {self.alpha}")

    @property
    def is_identity(self) -> bool:
        return self.alpha == 0 or not (self.enable_shift or self.enable_scale or self.enable_rotate)

    def to_dict(self) -> dict:
        return asdict(self)


def _snap(coords: np.ndarray) -> np.ndarray:
    near = np.round(coords)
    return np.where(np.abs(coords - near) < _SNAP, near, coords)


def _sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional (rows, cols); neighbours outside the raster read as 0."""
    h, w, _ = image.shape
    rows = _snap(rows)
    cols = _snap(cols)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = (rows - r0)[..., None]
    fc = (cols - c0)[..., None]
    out = np.zeros(rows.shape + (image.shape[2],), dtype=np.float64)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            rr = r0 + dr
            cc = c0 + dc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            vals = np.zeros_like(out)
            vals[ok] = image[rr[ok], cc[ok]]
            out += wr * wc * vals
    return out


def _warp(image: np.ndarray, inverse) -> np.ndarray:
    h, w, _ = image.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    src_r, src_c = inverse(rr, cc)
    out = _sample(image.astype(np.float64), src_r, src_c)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def _check(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise AugmentError(f"expected an (H, W, C) raster, got shape {image.shape}")
    return image


def shift(image, dx: float, dy: float) -> np.ndarray:
    """Translate by ``dx`` of the width (right) and ``dy`` of the height (down)."""
    image = _check(image)
    if abs(dx) > 0.5 or abs(dy) > 0.5:
        raise AugmentError("shift fractions must satisfy |dx|, |dy| <= 0.5")
    h, w, _ = image.shape
    px, py = dx * w, dy * h
    if px == 0 and py == 0:
        return image.copy()
    ix, iy = round(px), round(py)
    if abs(px - ix) < 1e-6 and abs(py - iy) < 1e-6:
        out = np.zeros_like(image)
        src = image[max(0, -iy): h - max(0, iy), max(0, -ix): w - max(0, ix)]
        out[max(0, iy): max(0, iy) + src.shape[0], max(0, ix): max(0, ix) + src.shape[1]] = src
        return out
    return _warp(image, lambda r, c: (r - py, c - px))


def scale(image, factor: float) -> np.ndarray:
    """Zoom about the image centre; ``factor`` > 1 crops, < 1 leaves a zero border."""
    image = _check(image)
    if not 0.5 <= factor <= 1.5:
        raise AugmentError(f"scale factor must lie in [0.5, 1.5], got {factor}")
    if factor == 1:
        return image.copy()
    h, w, _ = image.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    return _warp(image, lambda r, c: (cy + (r - cy) / factor, cx + (c - cx) / factor))


def rotate(image, degrees: float) -> np.ndarray:
    """Rotate counter-clockwise (as displayed) about the image centre."""
    image = _check(image)
    if abs(degrees) > 180:
        raise AugmentError(f"rotation must satisfy |degrees| <= 180, got {degrees}")
    if degrees == 0:
        return image.copy()
    h, w, _ = image.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    t = np.deg2rad(degrees)
    cos, sin = np.cos(t), np.sin(t)

    def inverse(r, c):
        # rows point down, so a displayed CCW turn maps output (y, x) back via a CW turn
        y, x = r - cy, c - cx
        return cy + cos * y + sin * x, cx - sin * y + cos * x

    return _warp(image, inverse)


def sample_params(config: AugmentConfig, rng: np.random.Generator) -> dict:
    """Draw transform parameters uniformly from [-alpha, alpha] for enabled transforms."""
    a = float(config.alpha)
    params = {}
    if config.enable_shift:
        params["shift_x"] = rng.uniform(-a, a)
        params["shift_y"] = rng.uniform(-a, a)
    if config.enable_scale:
        params["scale"] = rng.uniform(-a, a)
    if config.enable_rotate:
        params["rotate"] = rng.uniform(-a, a)
    return params


def random_augment(image, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    image = _check(image)
    if config.is_identity:
        return image.copy()
    p = sample_params(config, rng)
    out = image
    if "shift_x" in p:
        out = shift(out, p["shift_x"] / 100.0, p["shift_y"] / 100.0)
    if "scale" in p:
        out = scale(out, 1.0 + p["scale"] / 100.0)
    if "rotate" in p:
        out = rotate(out, p["rotate"])
    return out
