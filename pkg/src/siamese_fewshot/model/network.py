"""Backbone configuration, parameter containers, forward/backward passes and weight files."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers as L

WEIGHTS_MAGIC = b"SIAMWTS\x00"
WEIGHTS_FORMAT = "siamese-fewshot-weights"
WEIGHTS_VERSION = 1
SOURCES = ("scratch", "imported", "pretrained")


class ModelError(ValueError):
    pass


class NumericFault(FloatingPointError):
    """A forward or backward pass produced a non-finite value."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class WeightFileError(ModelError):
    pass


class IncompatibleWeightsError(WeightFileError):
    pass


@dataclass(frozen=True)
class ConvBlock:
    filters: int
    kernel: int = 3
    stride: int = 1
    pooling: int = 2

    def __post_init__(self):
        if min(self.filters, self.kernel, self.stride) <= 0 or self.pooling < 0:
            raise ModelError(f"invalid conv block {self}")


@dataclass(frozen=True)
class BackboneConfig:
    input_shape: tuple[int, int, int] = (32, 32, 1)
    conv_blocks: tuple[ConvBlock, ...] = (ConvBlock(8), ConvBlock(16), ConvBlock(32))
    embedding_dim: int = 64
    normalize: bool = True
    use_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        blocks = tuple(b if isinstance(b, ConvBlock) else ConvBlock(*b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)
        if len(self.input_shape) != 3 or min(self.input_shape) <= 0:
            raise ModelError(f"input_shape must be (h, w, c) with positive entries, got {self.input_shape}")
        if self.embedding_dim < 2:
            raise ModelError("embedding_dim must be at least 2")
        self.feature_shape()  # validates that spatial dims stay positive

    def feature_shape(self) -> tuple[int, int, int]:
        h, w, c = self.input_shape
        for i, blk in enumerate(self.conv_blocks):
            h = L.conv_out_size(h, blk.kernel, blk.stride)
            w = L.conv_out_size(w, blk.kernel, blk.stride)
            if blk.pooling > 1:
                h, w = h // blk.pooling, w // blk.pooling
            c = blk.filters
            if h <= 0 or w <= 0:
                raise ModelError(f"conv block {i} shrinks the feature map to {h}x{w}")
        return c, h, w

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        c = self.input_shape[2]
        for i, blk in enumerate(self.conv_blocks):
            shapes[f"conv{i}.weight"] = (blk.filters, c, blk.kernel, blk.kernel)
            if self.use_bias:
                shapes[f"conv{i}.bias"] = (blk.filters,)
            c = blk.filters
        flat = int(np.prod(self.feature_shape()))
        shapes["dense.weight"] = (flat, self.embedding_dim)
        if self.use_bias:
            shapes["dense.bias"] = (self.embedding_dim,)
        return shapes

    def n_parameters(self) -> int:
        return int(sum(np.prod(s) for s in self.tensor_shapes().values()))

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "conv_blocks": [[b.filters, b.kernel, b.stride, b.pooling] for b in self.conv_blocks],
            "embedding_dim": self.embedding_dim,
            "normalize": self.normalize,
            "use_bias": self.use_bias,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BackboneConfig":
        return cls(
            input_shape=tuple(doc["input_shape"]),
            conv_blocks=tuple(ConvBlock(*b) for b in doc["conv_blocks"]),
            embedding_dim=int(doc["embedding_dim"]),
            normalize=bool(doc.get("normalize", True)),
            use_bias=bool(doc.get("use_bias", True)),
        )


@dataclass(frozen=True, eq=False)
class Parameters:
    config: BackboneConfig
    tensors: dict[str, np.ndarray]
    source: str = "scratch"
    version: int = WEIGHTS_VERSION

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ModelError(f"source must be one of {SOURCES}, got {self.source!r}")
        expected = self.config.tensor_shapes()
        if list(self.tensors) != list(expected):
            raise ModelError(f"tensor names {list(self.tensors)} do not match config {list(expected)}")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ModelError(f"{name}: expected shape {shape}, found {self.tensors[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.source, self.version)

    def replace(self, tensors: dict | None = None, source: str | None = None) -> "Parameters":
        return Parameters(self.config, dict(tensors if tensors is not None else self.tensors),
                          source or self.source, self.version)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.tensors.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()[:16]

    def bitwise_equal(self, other: "Parameters") -> bool:
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def scratch_parameters(config: BackboneConfig, seed: int = 0, dtype=np.float32) -> Parameters:
    """Variance-scaled uniform weights (He for conv layers, LeCun for the dense layer), zero biases."""
    rng = np.random.default_rng(int(seed))
    tensors = {}
    for name, shape in config.tensor_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        gain = 2.0 if name.startswith("conv") else 1.0
        limit = np.sqrt(3.0 * gain / fan_in)
        tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return Parameters(config, tensors, "scratch")


def init_parameters(config: BackboneConfig, strategy: str = "scratch_random", seed: int = 0,
                    path: str | os.PathLike | None = None, dtype=np.float32) -> Parameters:
    if strategy in ("scratch", "scratch_random"):
        return scratch_parameters(config, seed, dtype)
    if strategy == "imported":
        if path is None:
            raise ModelError("imported initialisation needs a weight file path")
        return import_weights(path, config).astype(dtype)
    raise ModelError(f"unknown initialisation strategy {strategy!r}")


# --------------------------------------------------------------------------
# forward / backward


def _check_finite(x: np.ndarray, layer: int, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericFault(f"non-finite {what} at layer {layer}", layer)


def _to_nchw(images: np.ndarray, config: BackboneConfig, dtype) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if tuple(images.shape[1:]) != config.input_shape:
        raise ModelError(f"image shape {images.shape[1:]} does not match input_shape {config.input_shape}")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=dtype)


def forward_batch(params: Parameters, images: np.ndarray, keep_tape: bool = False):
    """Embed a batch of (B, H, W, C) images.  Returns ``(embeddings, tape)``."""
    cfg = params.config
    x = _to_nchw(images, cfg, params.dtype)
    tape = []
    layer = 0
    for i, blk in enumerate(cfg.conv_blocks):
        x, cache = L.conv2d_forward(x, params[f"conv{i}.weight"], params.tensors.get(f"conv{i}.bias"), blk.stride)
        tape.append(("conv", i, cache))
        _check_finite(x, layer, "activation")
        x, mask = L.relu_forward(x)
        tape.append(("relu", i, mask))
        layer += 1
        if blk.pooling > 1:
            x, cache = L.maxpool_forward(x, blk.pooling)
            tape.append(("pool", i, cache))
            layer += 1
    feat_shape = x.shape
    x = x.reshape(len(x), -1)
    tape.append(("flatten", None, feat_shape))
    x, cache = L.dense_forward(x, params["dense.weight"], params.tensors.get("dense.bias"))
    tape.append(("dense", None, cache))
    _check_finite(x, layer, "activation")
    layer += 1
    if cfg.normalize:
        x, cache = L.l2norm_forward(x)
        tape.append(("l2norm", None, cache))
        _check_finite(x, layer, "activation")
    return x, (tape if keep_tape else None)


def backward_batch(params: Parameters, tape, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode pass through ``tape``; returns one gradient per parameter tensor."""
    grads = {}
    g = grad_out
    with_bias = params.config.use_bias
    for kind, idx, cache in reversed(tape):
        if kind == "l2norm":
            g = L.l2norm_backward(g, cache)
        elif kind == "dense":
            g, gw, gb = L.dense_backward(g, params["dense.weight"], cache, with_bias)
            grads["dense.weight"] = gw
            if with_bias:
                grads["dense.bias"] = gb
        elif kind == "flatten":
            g = g.reshape(cache)
        elif kind == "pool":
            g = L.maxpool_backward(g, cache)
        elif kind == "relu":
            g = L.relu_backward(g, cache)
        elif kind == "conv":
            g, gw, gb = L.conv2d_backward(g, params[f"conv{idx}.weight"], cache, with_bias, need_input_grad=idx > 0)
            grads[f"conv{idx}.weight"] = gw
            if with_bias:
                grads[f"conv{idx}.bias"] = gb
    out = {name: grads[name] for name in params.tensors}
    for name, arr in out.items():
        if not np.all(np.isfinite(arr)):
            raise NumericFault(f"non-finite gradient for {name}")
    return out


def forward(params: Parameters, image: np.ndarray) -> np.ndarray:
    """Embedding of a single (H, W, C) image."""
    emb, _ = forward_batch(params, np.asarray(image)[None])
    return emb[0]


def embed(params: Parameters, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    n = len(images)
    if n == 0:
        return np.zeros((0, params.config.embedding_dim), dtype=params.dtype)
    return np.concatenate([forward_batch(params, images[i: i + batch_size])[0] for i in range(0, n, batch_size)])


# --------------------------------------------------------------------------
# weight files: magic, u32 header length, JSON header, little-endian float32 tensors


def export_weights(params: Parameters, path: str | os.PathLike) -> None:
    header = {
        "format": WEIGHTS_FORMAT,
        "version": params.version,
        "source": params.source,
        "config": params.config.to_dict(),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(WEIGHTS_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for arr in params.tensors.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write weights to {path}: {exc}") from exc


def import_weights(path: str | os.PathLike, expected: BackboneConfig | None = None) -> Parameters:
    data = Path(path).read_bytes()
    if data[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    pos = len(WEIGHTS_MAGIC)
    (hlen,) = struct.unpack("<I", data[pos: pos + 4])
    pos += 4
    try:
        header = json.loads(data[pos: pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: corrupt header: {exc}") from None
    pos += hlen
    if header.get("format") != WEIGHTS_FORMAT or header.get("version") != WEIGHTS_VERSION:
        raise IncompatibleWeightsError(
            f"{path}: weight file version {header.get('format')}/{header.get('version')} is incompatible "
            f"with {WEIGHTS_FORMAT}/{WEIGHTS_VERSION}"
        )
    config = BackboneConfig.from_dict(header["config"])
    if expected is not None:
        want = expected.tensor_shapes()
        for name, shape in want.items():
            found = next((tuple(t["shape"]) for t in header["tensors"] if t["name"] == name), None)
            if found != shape:
                raise WeightFileError(f"{path}: layer {name}: expected shape {shape}, found {found}")
        config = expected
    tensors = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        nbytes = 4 * int(np.prod(shape))
        chunk = data[pos: pos + nbytes]
        if len(chunk) != nbytes:
            raise WeightFileError(f"{path}: layer {t['name']} truncated ({len(chunk)} of {nbytes} bytes)")
        tensors[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise WeightFileError(f"{path}: {len(data) - pos} trailing bytes after last tensor")
    return Parameters(config, tensors, "imported" if header["source"] == "scratch" else header["source"])
