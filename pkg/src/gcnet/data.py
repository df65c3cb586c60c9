"""Dataset ingestion: IDX image files, headered CSV, synthetic Gaussians,
plus the every-other-class remapping used for always-on benchmarks.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .objective import ClassMapping
from .tensor import DTYPE

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray  # float32, (n, width), values in [0, 1]
    y: np.ndarray  # int64, (n,)
    num_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=DTYPE)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise DataError(
                f"features {self.x.shape} and labels {self.y.shape} do not align"
            )
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DataError(
                f"labels outside [0,{self.num_classes}): "
                f"{self.y.min()}..{self.y.max()}"
            )

    def __len__(self):
        return len(self.y)

    @property
    def width(self) -> int:
        return self.x.shape[1]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.x[indices], self.y[indices], self.num_classes)


def load_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file -> (n, rows*cols) floats scaled into [0,1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DataError(f"{path}: truncated IDX header at byte {len(raw)}")
    magic, n, rows, cols = struct.unpack_from(">IIII", raw, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad image magic 0x{magic:08x} at byte 0")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes, found deviation at byte "
            f"{min(len(raw), expected)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    images = pixels.reshape(n, rows * cols).astype(DTYPE) / DTYPE(255)
    return images


def load_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX header at byte {len(raw)}")
    magic, n = struct.unpack_from(">II", raw, 0)
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad label magic 0x{magic:08x} at byte 0")
    if len(raw) != 8 + n:
        raise DataError(
            f"{path}: expected {8 + n} bytes, found deviation at byte "
            f"{min(len(raw), 8 + n)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def save_idx_images(path, images: np.ndarray, rows: int, cols: int) -> None:
    """Write uint8 images (n, rows*cols) in IDX format (fixture/export aid)."""
    images = np.asarray(images, dtype=np.uint8)
    n = images.shape[0]
    if images.shape[1] != rows * cols:
        raise DataError(f"images width {images.shape[1]} != rows*cols {rows * cols}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def save_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise DataError("IDX labels must fit in one byte")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def load_idx_dataset(images_path, labels_path, num_classes=None) -> Dataset:
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if len(x) != len(y):
        raise DataError(
            f"{images_path} has {len(x)} images but {labels_path} has {len(y)} labels"
        )
    return Dataset(x, y, num_classes or int(y.max()) + 1)


def load_csv_dataset(path, label_column: str = "label", num_classes=None) -> Dataset:
    """Headered CSV with one integer label column; features min-max scaled to
    [0,1] only when they fall outside that range."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: no {label_column!r} column in header {header}")
        label_idx = header.index(label_column)
        xs, ys = [], []
        for lineno, rowvals in enumerate(reader, start=2):
            if len(rowvals) != len(header):
                raise DataError(
                    f"{path}: line {lineno} has {len(rowvals)} fields, expected {len(header)}"
                )
            try:
                ys.append(int(rowvals[label_idx]))
                xs.append(
                    [float(v) for i, v in enumerate(rowvals) if i != label_idx]
                )
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    if not xs:
        raise DataError(f"{path}: no data rows")
    x = np.asarray(xs, dtype=DTYPE)
    lo, hi = float(x.min()), float(x.max())
    if lo < 0.0 or hi > 1.0:
        span = hi - lo if hi > lo else 1.0
        x = (x - DTYPE(lo)) / DTYPE(span)
    y = np.asarray(ys, dtype=np.int64)
    return Dataset(x, y, num_classes or int(y.max()) + 1)


def synthetic_gaussians(
    samples: int,
    width: int,
    num_classes: int = 2,
    ratio: tuple[int, int] = (1, 1),
    separation: float = 2.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian blobs in [0,1]^width; class 0 is background.

    ``ratio`` is (positive, negative): the share of samples carrying a
    non-background label versus background, matching always-on streams where
    background dominates.  Positive mass splits evenly over classes 1..C-1.
    """
    pos, neg = ratio
    if pos < 0 or neg < 0 or pos + neg == 0:
        raise ConfigError(f"bad positive:negative ratio {ratio}")
    if num_classes < 2:
        raise ConfigError("synthetic data needs at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    neg_frac = neg / (pos + neg)
    counts = [round(samples * neg_frac)]
    remaining = samples - counts[0]
    per_pos = [remaining // (num_classes - 1)] * (num_classes - 1)
    for i in range(remaining - sum(per_pos)):
        per_pos[i] += 1
    counts.extend(per_pos)
    # spread class means inside the unit cube, sigma scaled by separation
    means = rng.uniform(0.3, 0.7, size=(num_classes, width))
    sigma = 0.2 / separation
    xs, ys = [], []
    for label, count in enumerate(counts):
        if count == 0:
            continue
        pts = rng.normal(means[label], sigma, size=(count, width))
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(count, label, dtype=np.int64))
    x = np.concatenate(xs).astype(DTYPE)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return Dataset(x[order], y[order], num_classes)


def remap_every_other(labels, num_classes: int) -> tuple[np.ndarray, ClassMapping]:
    """Collapse odd labels into background 0; renumber evens as 1..ceil(C/2).

    Keeps the original even classes as distinct positives, so a C-class
    problem becomes a (ceil(C/2)+1)-class problem with a roughly 1:1
    positive:negative balance on balanced input.
    """
    table = {}
    for orig in range(num_classes):
        table[orig] = 0 if orig % 2 == 1 else 1 + orig // 2
    mapping = ClassMapping(table)
    return mapping.apply(labels), mapping


def train_val_split(ds: Dataset, val_fraction: float = 0.2, seed: int = 0):
    """Deterministic shuffled split; returns (train, val)."""
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0,1), got {val_fraction}")
    order = np.random.default_rng(np.random.SeedSequence([seed, 4])).permutation(len(ds))
    n_val = int(round(len(ds) * val_fraction))
    return ds.subset(order[n_val:]), ds.subset(order[:n_val])
