"""Dataset loading (IDX images, numeric CSV), synthetic blobs, splits, batches."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

import numpy as np

__all__ = [
    "Dataset",
    "Split",
    "load_idx",
    "load_csv",
    "make_blobs",
    "split",
    "batches",
    "flatten_features",
]

IDX_IMAGE_MAGIC = 0x00000803  # unsigned bytes, 3 dimensions
IDX_LABEL_MAGIC = 0x00000801  # unsigned bytes, 1 dimension


@dataclass
class Dataset:
    """Immutable sample collection with dense ids 0..n-1."""

    features: np.ndarray  # (n, d) or (n, c, h, w)
    labels: np.ndarray  # (n,) class indices
    ids: np.ndarray  # (n,) == arange(n)
    class_count: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, ids) -> "Dataset":
        """New dataset over the selected samples, reindexed to dense ids."""
        ids = np.asarray(ids, dtype=np.int64)
        return Dataset(
            features=self.features[ids].copy(),
            labels=self.labels[ids].copy(),
            ids=np.arange(ids.shape[0]),
            class_count=self.class_count,
        )


@dataclass
class Split:
    train_ids: np.ndarray
    test_ids: np.ndarray


def flatten_features(features: np.ndarray) -> np.ndarray:
    """View image features as flat rows; flat features pass through."""
    if features.ndim == 2:
        return features
    return features.reshape(features.shape[0], -1)


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise ValueError(f"{path}: truncated IDX header, {len(blob)} bytes < {header}")
    magic = int.from_bytes(blob[:4], "big")
    if magic != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}"
        )
    dims = [int.from_bytes(blob[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) < header + count:
        raise ValueError(
            f"{path}: truncated IDX payload, expected {header + count} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files; pixels scale to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, ndim=3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    n, h, w = images.shape
    features = images.astype(np.float64).reshape(n, 1, h, w) / 255.0
    labels = labels.astype(np.int64)
    return Dataset(features, labels, np.arange(n), class_count=int(labels.max()) + 1 if n else 0)


def load_csv(path, label_column: Union[str, int]) -> Dataset:
    """Headered numeric CSV; features standardized per column, labels remapped.

    Zero-variance columns standardize to all zeros. Label values are mapped to
    dense class indices in sorted order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if isinstance(label_column, str):
            if label_column not in header:
                raise ValueError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < len(header):
                raise ValueError(f"{path}: label column {label_idx} out of range")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                bad = next(cell for cell in row if not _is_number(cell))
                raise ValueError(f"{path}: row {line_no}: non-numeric value {bad!r}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    raw_labels = table[:, label_idx]
    features = np.delete(table, label_idx, axis=1)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    features = np.where(std > 0, (features - mean) / scale, 0.0)
    classes, labels = np.unique(raw_labels, return_inverse=True)
    n = table.shape[0]
    return Dataset(features, labels.astype(np.int64), np.arange(n), class_count=len(classes))


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def make_blobs(n: int, classes: int, d: int, spread: float, seed: int) -> Dataset:
    """Seeded Gaussian clusters with unit-separated, class-indexed means.

    Class k is centered at the unit vector e_k (falling back to k * e_0 when
    the feature width is smaller than the class count); labels cycle
    0..classes-1 so counts are balanced within one sample.
    """
    if not n >= classes >= 2:
        raise ValueError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    means = np.zeros((classes, d))
    if d >= classes:
        means[np.arange(classes), np.arange(classes)] = 1.0
    else:
        means[:, 0] = np.arange(classes)
    features = means[labels] + spread * rng.standard_normal((n, d))
    return Dataset(features, labels, np.arange(n), class_count=classes)


def split(ds: Dataset, test_fraction: float, seed: int) -> Split:
    """Seeded shuffle, then partition into disjoint train/test index sets."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = ds.n
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"test_fraction {test_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return Split(
        train_ids=np.sort(perm[n_test:]),
        test_ids=np.sort(perm[:n_test]),
    )


def batches(ds: Dataset, ids, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Per-epoch reshuffled batches; a final batch of fewer than 2 is dropped.

    The shuffle mixes (seed, epoch) so every epoch sees a fresh deterministic
    order.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    ids = np.asarray(ids, dtype=np.int64)
    rng = np.random.default_rng([seed, epoch])
    perm = ids[rng.permutation(ids.shape[0])]
    for start in range(0, perm.shape[0], batch_size):
        chunk = perm[start : start + batch_size]
        if chunk.shape[0] >= 2:
            yield chunk
