"""Shared fixtures: the desk-scale benchmark dataset and its IDX fixture files.

The benchmark prefers real Fashion-MNIST IDX files when a directory is
supplied via GCNET_FASHION_MNIST_DIR (train-images-idx3-ubyte /
train-labels-idx1-ubyte); otherwise it falls back to the bundled scikit-learn
digits corpus, written out and re-read as IDX so the real loader path is
exercised either way.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from gcnet.data import (
    Dataset,
    load_idx_dataset,
    remap_every_other,
    save_idx_images,
    save_idx_labels,
    train_val_split,
)

FASHION_ENV = "GCNET_FASHION_MNIST_DIR"
BENCHMARK_SUBSET = 10000


def _digits_idx_files(dest: Path) -> tuple[Path, Path]:
    from sklearn.datasets import load_digits

    digits = load_digits()
    # digits pixels are 0..16; rescale to the usual 0..255 byte range
    pixels = (digits.data * 15).clip(0, 255).astype(np.uint8)
    images = dest / "digits-images-idx3-ubyte"
    labels = dest / "digits-labels-idx1-ubyte"
    save_idx_images(images, pixels, 8, 8)
    save_idx_labels(labels, digits.target)
    return images, labels


@pytest.fixture(scope="session")
def benchmark_raw(tmp_path_factory) -> Dataset:
    """The always-on benchmark corpus before remapping (10 classes)."""
    env_dir = os.environ.get(FASHION_ENV)
    if env_dir:
        images = Path(env_dir) / "train-images-idx3-ubyte"
        labels = Path(env_dir) / "train-labels-idx1-ubyte"
        ds = load_idx_dataset(images, labels)
        return ds.subset(np.arange(min(BENCHMARK_SUBSET, len(ds))))
    dest = tmp_path_factory.mktemp("idx")
    images, labels = _digits_idx_files(dest)
    return load_idx_dataset(images, labels)


@pytest.fixture(scope="session")
def benchmark(benchmark_raw) -> tuple[Dataset, Dataset]:
    """Remapped every-other benchmark, split into (train, val)."""
    remapped, _ = remap_every_other(benchmark_raw.y, benchmark_raw.num_classes)
    ds = Dataset(benchmark_raw.x, remapped, int(remapped.max()) + 1)
    return train_val_split(ds, val_fraction=0.2, seed=0)
