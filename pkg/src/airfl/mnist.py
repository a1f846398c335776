"""Reader for the big-endian IDX files that MNIST ships in.

Images: magic 2051, then ``n, rows, cols`` and ``n*rows*cols`` unsigned bytes.
Labels: magic 2049, then ``n`` and ``n`` unsigned bytes. Gzipped files are
recognized by their two-byte header.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .learning import DataShard

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise FormatError(f"{what}: file too short for an IDX header ({len(raw)} bytes)")
    (seen,) = struct.unpack(">i", raw[:4])
    if seen != magic:
        raise FormatError(f"{what}: bad magic {seen} (0x{seen & 0xFFFFFFFF:08x}), expected {magic}")
    if len(raw) < header:
        raise FormatError(f"{what}: truncated header ({len(raw)} of {header} bytes)")
    dims = struct.unpack(">" + "i" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise FormatError(f"{what}: truncated payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """``(n, rows, cols)`` uint8 array."""
    return _parse(_read_bytes(path), IMAGE_MAGIC, 3, str(path))


def read_idx_labels(path) -> np.ndarray:
    labels = _parse(_read_bytes(path), LABEL_MAGIC, 1, str(path))
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label {int(labels.max())} outside 0..9")
    return labels


def load_mnist_idx(images_path, labels_path):
    """Return ``(X, y)`` with ``X`` of shape ``(n, rows*cols)`` scaled to [0, 1]
    and integer labels ``y``."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return X, labels.astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (2049 for 1-D, 2051 for 3-D). Used for fixtures."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: LABEL_MAGIC, 3: IMAGE_MAGIC}.get(array.ndim)
    if magic is None:
        raise FormatError(f"cannot write a {array.ndim}-D array as IDX")
    header = struct.pack(">i" + "i" * array.ndim, magic, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def partition(X: np.ndarray, y: np.ndarray, K: int, rng: np.random.Generator, per_device: int | None = None):
    """Split rows into ``K`` disjoint shards drawn without replacement."""
    n = len(y)
    size = n // K if per_device is None else per_device
    if size < 1 or size * K > n:
        raise ConfigError(f"cannot draw {K} shards of {size} from {n} samples", "K")
    order = rng.permutation(n)
    return [DataShard(X[order[k * size:(k + 1) * size]], y[order[k * size:(k + 1) * size]], owner=k)
            for k in range(K)]
