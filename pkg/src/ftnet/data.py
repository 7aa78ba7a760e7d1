"""Datasets: the ring-of-Gaussians sampler, an MNIST IDX reader, and batching.

Samples are stored with a trailing sample mode, like every other array in
the package: a GMM dataset is ``(2, n)`` and MNIST is ``(28, 28, n)``.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, LengthError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussians with means evenly spaced on a circle."""

    num_clusters: int = 6
    center: tuple[float, float] = (0.5, 0.5)
    ring_radius: float = 0.4
    variance: float = 0.2
    points: int = 10_000

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if self.num_clusters < 1 or self.points < 1:
            raise ValueError("num_clusters and points must be >= 1")
        if self.ring_radius < 0:
            raise ValueError("ring_radius must be non-negative")

    @classmethod
    def separated(cls, **overrides) -> "GmmSpec":
        """Same ring with sigma^2 = 0.005, so the six clusters do not overlap."""
        return cls(**{"variance": 0.005, **overrides})

    def means(self) -> np.ndarray:
        """``(K, 2)`` array of cluster means."""
        k = np.arange(self.num_clusters)
        angle = 2.0 * np.pi * k / self.num_clusters
        return np.stack([self.center[0] + self.ring_radius * np.cos(angle),
                         self.center[1] + self.ring_radius * np.sin(angle)], axis=1)


@dataclass
class Dataset:
    samples: np.ndarray
    source: str
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != self.samples.shape[-1]:
            raise ValueError("label count does not match sample count")

    def __len__(self) -> int:
        return self.samples.shape[-1]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.samples.shape[:-1]

    def subset(self, index) -> "Dataset":
        """The first ``index`` samples when given an int, else ``samples[..., index]``."""
        if isinstance(index, (int, np.integer)):
            index = slice(None, int(index))
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.samples[..., index], self.source, labels)


def gmm_sample(spec: GmmSpec, rng: np.random.Generator | int | None = None) -> Dataset:
    """Draw ``spec.points`` points; labels hold each point's cluster index."""
    rng = np.random.default_rng(rng)
    labels = rng.integers(0, spec.num_clusters, size=spec.points)
    noise = rng.standard_normal((2, spec.points)) * math.sqrt(spec.variance)
    points = spec.means().T[:, labels] + noise
    return Dataset(points, "gmm", labels)


def write_points_csv(path, points: np.ndarray, labels: np.ndarray | None = None) -> None:
    """Write a ``(2, n)`` point array as CSV, 17 significant digits per float."""
    points = np.asarray(points)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "cluster"] if labels is not None else ["x", "y"])
        for k in range(points.shape[1]):
            row = [f"{points[0, k]:.17g}", f"{points[1, k]:.17g}"]
            if labels is not None:
                row.append(str(int(labels[k])))
            w.writerow(row)


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    points = np.array([[float(r[0]), float(r[1])] for r in body]).T.reshape(2, len(body))
    labels = np.array([int(r[2]) for r in body]) if "cluster" in header else None
    return points, labels


# -- MNIST IDX --------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise LengthError(f"IDX header needs {head} bytes, file has {len(raw)}")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    payload = raw[head:]
    if len(payload) != math.prod(dims):
        raise LengthError(f"IDX payload has {len(payload)} bytes, header promises {math.prod(dims)}")
    return dims, payload


def load_mnist_idx(images_path, labels_path=None, limit: int | None = None) -> Dataset:
    """Read IDX image (and optional label) files; ``.gz`` files are decompressed.

    Pixels become a ``(rows, cols, count)`` float array scaled into ``[0, 1]``.
    """
    (count, rows, cols), payload = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    labels = None
    if labels_path is not None:
        (n_labels,), lab = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1)
        if n_labels != count:
            raise LengthError(f"{n_labels} labels for {count} images")
        labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    if limit is not None:
        pixels = pixels[:limit]
        labels = None if labels is None else labels[:limit]
    images = np.moveaxis(pixels, 0, -1).astype(np.float64) / 255.0
    return Dataset(np.ascontiguousarray(images), "mnist", labels)


def idx_count(images_path) -> int:
    """Item count from an IDX header, without reading the payload."""
    opener = gzip.open if Path(images_path).suffix == ".gz" else open
    with opener(images_path, "rb") as f:
        head = f.read(8)
    if len(head) < 8:
        raise LengthError("file too short for an IDX header")
    return struct.unpack(">I", head[4:8])[0]


def idx_images_bytes(pixels: np.ndarray) -> bytes:
    """Encode a ``(count, rows, cols)`` uint8 array as an IDX image file."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    return struct.pack(">4I", IDX_IMAGES_MAGIC, *pixels.shape) + pixels.tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


# -- batching ---------------------------------------------------------------

def batch_indices(n: int, c: int, rng: np.random.Generator | None = None,
                  shuffle: bool = True) -> list[np.ndarray]:
    """Index sets for one epoch; the short remainder batch is dropped."""
    if not 1 <= c <= n:
        raise ValueError(f"batch size {c} out of range for {n} samples")
    order = rng.permutation(n) if shuffle else np.arange(n)
    return [order[k:k + c] for k in range(0, n - c + 1, c)]


def batches(ds: Dataset, c: int, rng: np.random.Generator | int | None = None,
            shuffle: bool = True, epochs: int | None = 1) -> Iterator[np.ndarray]:
    """Yield ``(..., c)`` batches; ``epochs=None`` cycles forever."""
    rng = np.random.default_rng(rng)
    if not 1 <= c <= len(ds):
        raise ValueError(f"batch size {c} out of range for {len(ds)} samples")
    epoch = 0
    while epochs is None or epoch < epochs:
        for idx in batch_indices(len(ds), c, rng, shuffle):
            yield ds.samples[..., idx]
        epoch += 1
