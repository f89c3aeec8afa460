"""Reader and writer for the IDX container used by the MNIST distribution.

Layout (all integers big-endian)::

    [0:2]   two zero bytes
    [2]     element type code (0x08 = unsigned byte)
    [3]     number of dimensions
    [4:...] one uint32 size per dimension
    [...]   payload, row-major

Image files therefore start with the magic ``0x00000803`` and label files
with ``0x00000801``.  Files ending in ``.gz`` are transparently (de)compressed.
"""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_UBYTE = 0x08


class IdxFormatError(ValueError):
    """Raised for malformed or mismatched IDX files."""


@dataclass(frozen=True)
class DatasetHandle:
    images: np.ndarray  # (count, rows, cols) float64 in [0, 1]
    labels: np.ndarray  # (count,) int64
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "DatasetHandle":
        indices = np.asarray(indices, dtype=np.int64)
        prov = dict(self.provenance)
        prov["subset_size"] = int(len(indices))
        return DatasetHandle(self.images[indices], self.labels[indices], prov)


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse one IDX file into a uint8 array of the declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    if raw[0] != 0 or raw[1] != 0 or raw[2] != _UBYTE:
        raise IdxFormatError(f"{path}: unsupported IDX header 0x{magic:08x}")
    ndim = raw[3]
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = raw[header_len:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, _UBYTE, array.ndim])
    header += struct.pack(f">{array.ndim}I", *array.shape)
    data = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive byte-stable across runs
        with open(path, "wb") as raw_fh:
            with gzip.GzipFile(fileobj=raw_fh, mode="wb", mtime=0) as fh:
                fh.write(data)
    else:
        path.write_bytes(data)


def load_idx(images_path, labels_path) -> DatasetHandle:
    """Load an image/label IDX pair, scaling pixels to [0, 1]."""
    pixels = read_idx(images_path, IMAGE_MAGIC)
    if pixels.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected 3 dimensions, got {pixels.ndim}")
    labels = read_idx(labels_path, LABEL_MAGIC)
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected 1 dimension, got {labels.ndim}")
    if len(labels) != len(pixels):
        raise IdxFormatError(
            f"count mismatch: {len(pixels)} images vs {len(labels)} labels"
        )
    provenance = {
        "images": str(images_path),
        "labels": str(labels_path),
        "images_sha256": sha256_file(images_path),
        "labels_sha256": sha256_file(labels_path),
    }
    return DatasetHandle(
        pixels.astype(np.float64) / 255.0, labels.astype(np.int64), provenance
    )
