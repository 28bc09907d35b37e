"""Datasets: Gaussian clusters, label corruption, IDX and CSV ingestion."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import one_hot

__all__ = [
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "IdxFormatError",
    "LabeledDataset",
    "ClusterSpec",
    "make_clusters",
    "simplex_means",
    "corrupt_labels",
    "read_idx",
    "write_idx",
    "load_idx_pair",
    "subsample",
    "read_csv",
    "write_csv",
    "batch_iter",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


class IdxFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    true_labels: np.ndarray
    observed_labels: np.ndarray
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        m = len(self.inputs)
        if self.true_labels.shape != (m,) or self.observed_labels.shape != (m,):
            raise ValueError("label vectors must have one entry per input row")
        for lab in (self.true_labels, self.observed_labels):
            if m and (lab.min() < 0 or lab.max() >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.inputs)

    @property
    def corrupted(self) -> np.ndarray:
        return np.flatnonzero(self.true_labels != self.observed_labels)


@dataclass
class ClusterSpec:
    means: np.ndarray
    std: float
    per_class: int
    seed: int = 0

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if self.means.shape[0] < 2:
            raise ValueError("need at least two classes")
        if self.std < 0:
            raise ValueError("std must be nonnegative")

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]


def simplex_means(n_classes: int, dim: int, separation: float, seed: int = 0) -> np.ndarray:
    """Class means with pairwise distance ``separation`` in a random rotation of R^dim."""
    if dim < n_classes:
        raise ValueError("dim must be >= n_classes")
    rng = np.random.default_rng(seed)
    basis = np.eye(n_classes) - 1.0 / n_classes
    basis *= separation / np.sqrt(2.0)
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_classes)))
    return basis @ q.T


def make_clusters(spec: ClusterSpec, rng=None, split: str = "train") -> LabeledDataset:
    """Exactly ``per_class`` isotropic Gaussian samples around each mean."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    c, d = spec.means.shape
    labels = np.repeat(np.arange(c), spec.per_class)
    x = spec.means[labels] + spec.std * rng.standard_normal((labels.size, d))
    order = rng.permutation(labels.size)
    return LabeledDataset(x[order], labels[order], labels[order].copy(), c, split)


def corrupt_labels(ds: LabeledDataset, ratio: float, rng) -> LabeledDataset:
    """Reassign ``floor(ratio * M)`` distinct samples to a uniformly chosen wrong class."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if ds.split == "test":
        raise ValueError("refusing to corrupt a test split")
    if ds.n_classes < 2:
        raise ValueError("cannot corrupt labels with fewer than two classes")
    m = len(ds)
    k = int(np.floor(ratio * m + 1e-9))
    idx = rng.choice(m, size=k, replace=False)
    observed = ds.true_labels.copy()
    shift = rng.integers(1, ds.n_classes, size=k)
    observed[idx] = (ds.true_labels[idx] + shift) % ds.n_classes
    return replace(ds, observed_labels=observed)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX container into an array of its stored dtype and shape."""
    with _open(path) as f:
        data = f.read()
    if len(data) < 4:
        raise IdxFormatError("truncated header", len(data))
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code not in _IDX_DTYPES or ndim < 1:
        raise IdxFormatError(f"bad magic number 0x{int.from_bytes(data[:4], 'big'):08x}", 0)
    head = 4 + 4 * ndim
    if len(data) < head:
        raise IdxFormatError("truncated dimension table", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:head])
    dt = np.dtype(_IDX_DTYPES[dtype_code])
    need = head + int(np.prod(dims)) * dt.itemsize
    if len(data) < need:
        raise IdxFormatError(f"truncated payload: expected {need} bytes, file has {len(data)}", len(data))
    if len(data) > need:
        raise IdxFormatError(f"{len(data) - need} trailing bytes after payload", need)
    return np.frombuffer(data, dtype=dt, offset=head, count=int(np.prod(dims))).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    code = next((k for k, s in _IDX_DTYPES.items()
                 if np.dtype(s).kind == array.dtype.kind and np.dtype(s).itemsize == array.dtype.itemsize), None)
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    be = array.astype(np.dtype(_IDX_DTYPES[code]))
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header + be.tobytes())


def load_idx_pair(images_path, labels_path, n_classes: int = 10, split: str = "train") -> LabeledDataset:
    """Images scaled to [0, 1] and flattened row-major, paired with labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.dtype != np.uint8 or images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected a 3-d unsigned byte image array", 0)
    if labels.dtype != np.uint8 or labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a 1-d unsigned byte label array", 0)
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    lab = labels.astype(np.int64)
    return LabeledDataset(x, lab, lab.copy(), n_classes, split)


def subsample(ds: LabeledDataset, size: int, rng) -> LabeledDataset:
    """Uniform draw without replacement."""
    if size >= len(ds):
        return ds
    idx = np.sort(rng.choice(len(ds), size=size, replace=False))
    return replace(ds, inputs=ds.inputs[idx], true_labels=ds.true_labels[idx],
                   observed_labels=ds.observed_labels[idx])


def read_csv(path, n_classes: int | None = None, split: str = "train") -> LabeledDataset:
    """Numeric CSV with a header row and a ``label`` column."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if "label" not in header:
            raise ValueError(f"{path}: no 'label' column in header")
        li = header.index("label")
        rows = [r for r in reader if r]
    labels = np.array([int(r[li]) for r in rows], dtype=np.int64)
    feats = np.array([[float(v) for j, v in enumerate(r) if j != li] for r in rows], dtype=np.float64)
    feats = feats.reshape(len(rows), len(header) - 1)
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    return LabeledDataset(feats, labels, labels.copy(), c, split)


def write_csv(path, inputs, labels, feature_names=None) -> None:
    inputs = np.asarray(inputs)
    names = feature_names or [f"x{j}" for j in range(inputs.shape[1])]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([*names, "label"])
        for row, lab in zip(inputs, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def batch_iter(ds: LabeledDataset, batch_size: int, rng):
    """One shuffled pass of ``(inputs, one_hot_targets)``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(ds))
    y = one_hot(ds.observed_labels, ds.n_classes)
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.inputs[idx], y[idx]
