"""Dataset ingestion (CSV, IDX), synthetic blobs, splitting, class subsetting.

Samples are stored as columns of the feature matrix; every loader rejects
malformed input rather than repairing it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ShapeError
from .tensor import DenseMatrix

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# CIFAR-10 animal categories kept by the five-class subset:
# bird, cat, deer, dog, frog.
CIFAR5_CLASSES = (2, 3, 4, 5, 6)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (dim x samples, one column per sample) plus labels."""

    features: DenseMatrix
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ShapeError("labels must be a 1-D sequence")
        if len(labels) != self.features.cols:
            raise ShapeError(
                f"label count {len(labels)} != sample count {self.features.cols}"
            )
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def sample_count(self):
        return self.features.cols

    @property
    def feature_dim(self):
        return self.features.rows


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions (summing to 1) and the shuffle seed."""

    train: float
    val: float
    test: float
    seed: int = 0

    def __post_init__(self):
        for name, frac in (("train", self.train), ("val", self.val), ("test", self.test)):
            if frac < 0:
                raise ValueError(f"{name} fraction must be >= 0")
        if self.train <= 0:
            raise ValueError("train fraction must be > 0")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


def load_csv(path, has_header=False) -> Dataset:
    """Read rows of ``f0,...,f{d-1},label`` into a Dataset.

    Errors carry the 1-based line number of the offending row.
    """
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if lineno == 1 and has_header:
                continue
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                if width < 2:
                    raise DataError("need at least one feature and a label", lineno)
            elif len(cells) != width:
                raise DataError(
                    f"ragged row: expected {width} cells, got {len(cells)}", lineno
                )
            try:
                feats = [float(c) for c in cells[:-1]]
            except ValueError:
                raise DataError(f"non-numeric feature cell in {cells[:-1]}", lineno) from None
            raw_label = cells[-1].strip()
            try:
                label = int(raw_label)
            except ValueError:
                raise DataError(f"non-integer label {raw_label!r}", lineno) from None
            if label < 0:
                raise DataError(f"negative label {label}", lineno)
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError("empty file", None)
    features = np.array(rows, dtype=np.float64).T
    labels = np.array(labels, dtype=np.int64)
    return Dataset(DenseMatrix(features), labels, int(labels.max()) + 1,
                   name=str(path))


def save_csv(ds: Dataset, path):
    """Write a Dataset back out in the load_csv row format."""
    with open(path, "w", encoding="utf-8") as fh:
        feats = ds.features.data
        for p in range(ds.sample_count):
            cells = [repr(float(v)) for v in feats[:, p]]
            cells.append(str(int(ds.labels[p])))
            fh.write(",".join(cells) + "\n")


def _read_idx(path, expected_magic, expected_dims):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}", 0)
    header_len = 4 + 4 * expected_dims
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX dims", len(raw))
    dims = struct.unpack(f">{expected_dims}I", raw[4:header_len])
    count = 1
    for d in dims:
        count *= d
    body = raw[header_len:]
    if len(body) != count:
        raise FormatError(
            f"{path}: expected {count} data bytes, got {len(body)}", header_len
        )
    return dims, np.frombuffer(body, dtype=np.uint8)


def load_idx(images_path, labels_path) -> Dataset:
    """Read the big-endian IDX image/label pair; pixels scaled to [0, 1]."""
    (n_img, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,), label_bytes = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise FormatError(
            f"image count {n_img} != label count {n_lab}", None
        )
    if n_img == 0:
        raise FormatError(f"{images_path}: empty image file", None)
    features = pixels.reshape(n_img, rows * cols).astype(np.float64).T / 255.0
    labels = label_bytes.astype(np.int64)
    return Dataset(DenseMatrix(features), labels, int(labels.max()) + 1,
                   name=str(images_path))


def synth_blobs(seed, samples_per_class, classes, dim, spread) -> Dataset:
    """Gaussian blobs around seeded random centroids; bitwise reproducible."""
    if samples_per_class < 1 or classes < 1 or dim < 1:
        raise ValueError("samples_per_class, classes and dim must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = rng.normal(0.0, 1.0, size=(classes, dim))
    blocks = []
    labels = []
    for c in range(classes):
        pts = centroids[c] + spread * rng.normal(0.0, 1.0, size=(samples_per_class, dim))
        blocks.append(pts.T)
        labels.extend([c] * samples_per_class)
    features = np.concatenate(blocks, axis=1)
    return Dataset(DenseMatrix(features), np.array(labels, dtype=np.int64),
                   classes, name=f"blobs(seed={seed})")


def split(ds: Dataset, spec: SplitSpec):
    """Seeded shuffle, then contiguous partition by the spec fractions.

    Returns a (train, val, test) tuple; a fraction that floors to zero
    samples yields None for that slot.
    """
    p = ds.sample_count
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(p)
    n_train = int(np.floor(spec.train * p))
    n_val = int(np.floor(spec.val * p))
    if n_train == 0:
        raise ValueError(f"train split is empty for {p} samples")
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    out = []
    feats = ds.features.data
    for part, tag in zip(parts, ("train", "val", "test")):
        if len(part) == 0:
            out.append(None)
            continue
        sub = Dataset(DenseMatrix(np.ascontiguousarray(feats[:, part])),
                      ds.labels[part], ds.class_count, name=f"{ds.name}:{tag}")
        out.append(sub)
    return tuple(out)


def subset_classes(ds: Dataset, keep) -> Dataset:
    """Keep samples whose label is in ``keep``; labels re-indexed densely."""
    keep = list(keep)
    if not keep:
        raise ValueError("keep must be nonempty")
    for c in keep:
        if not 0 <= c < ds.class_count:
            raise ValueError(f"class {c} out of range [0, {ds.class_count})")
    if len(set(keep)) != len(keep):
        raise ValueError("keep must not contain duplicates")
    remap = {cls: i for i, cls in enumerate(keep)}
    mask = np.isin(ds.labels, keep)
    if not mask.any():
        raise ValueError("subset is empty")
    feats = np.ascontiguousarray(ds.features.data[:, mask])
    labels = np.array([remap[int(c)] for c in ds.labels[mask]], dtype=np.int64)
    return Dataset(DenseMatrix(feats), labels, len(keep),
                   name=f"{ds.name}:subset{tuple(keep)}")
