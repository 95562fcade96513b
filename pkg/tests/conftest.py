"""Shared fixtures.

Real MNIST/CIFAR-10 may not be present in every environment, so most tests
run against a synthetic data root: small class-separable image sets written in
the genuine distribution formats (IDX for MNIST, pickled batches for
CIFAR-10), which exercises the real decoding paths end to end. Tests that
need the actual datasets use the `real_store` fixture and skip when the data
root (env ``COUPLAB_DATA_DIR``) does not hold them.
"""

from __future__ import annotations

import gzip
import os
import pickle
import struct
from pathlib import Path

import numpy as np
import pytest

from couplab.sources import DataNotFoundError, Source, SourceStore, Split

SYNTH_TRAIN_PER_CLASS = 64
SYNTH_TEST_PER_CLASS = 24


def _synthetic_digits(rng, n_per_class, size=28):
    """Class-separable fake digit images: one bright stripe per class."""
    images, labels = [], []
    for class_id in range(10):
        base = np.zeros((size, size), dtype=np.float64)
        row = 2 + 2 * class_id
        base[row:row + 3, 4:size - 4] = 220.0
        block = base[None] + rng.normal(0, 12, size=(n_per_class, size, size))
        images.append(np.clip(block, 0, 255).astype(np.uint8))
        labels.append(np.full(n_per_class, class_id, dtype=np.uint8))
    order = rng.permutation(10 * n_per_class)
    return np.concatenate(images)[order], np.concatenate(labels)[order]


def _write_idx(path: Path, array: np.ndarray) -> None:
    magic = 0x800 | array.ndim
    header = struct.pack(">i", magic) + b"".join(
        struct.pack(">i", d) for d in array.shape)
    with gzip.open(path, "wb") as fh:
        fh.write(header + array.tobytes())


def _synthetic_cifar(rng, n_per_class):
    """Fake 3x32x32 images with a class-specific color block."""
    images, labels = [], []
    for class_id in range(10):
        base = np.full((3, 32, 32), 30.0)
        base[class_id % 3, 4 + 2 * class_id:10 + 2 * class_id, :] = 210.0
        block = base[None] + rng.normal(0, 15, size=(n_per_class, 3, 32, 32))
        images.append(np.clip(block, 0, 255).astype(np.uint8))
        labels.append(np.full(n_per_class, class_id, dtype=np.int64))
    order = rng.permutation(10 * n_per_class)
    return np.concatenate(images)[order], np.concatenate(labels)[order]


def write_synthetic_sources(root: Path, train_per_class=SYNTH_TRAIN_PER_CLASS,
                            test_per_class=SYNTH_TEST_PER_CLASS, seed=1234) -> None:
    rng = np.random.default_rng(seed)
    mnist_dir = root / "mnist"
    mnist_dir.mkdir(parents=True, exist_ok=True)
    for split, n, stem in ((Split.TRAIN, train_per_class, "train"),
                           (Split.TEST, test_per_class, "t10k")):
        images, labels = _synthetic_digits(rng, n)
        _write_idx(mnist_dir / f"{stem}-images-idx3-ubyte.gz", images)
        _write_idx(mnist_dir / f"{stem}-labels-idx1-ubyte.gz", labels)

    batch_dir = root / "cifar-10-batches-py"
    batch_dir.mkdir(parents=True, exist_ok=True)
    train_images, train_labels = _synthetic_cifar(rng, train_per_class)
    chunks = np.array_split(np.arange(len(train_labels)), 5)
    for i, chunk in enumerate(chunks, start=1):
        payload = {b"data": train_images[chunk].reshape(len(chunk), -1),
                   b"labels": train_labels[chunk].tolist()}
        with open(batch_dir / f"data_batch_{i}", "wb") as fh:
            pickle.dump(payload, fh)
    test_images, test_labels = _synthetic_cifar(rng, test_per_class)
    with open(batch_dir / "test_batch", "wb") as fh:
        pickle.dump({b"data": test_images.reshape(len(test_labels), -1),
                     b"labels": test_labels.tolist()}, fh)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("synth_data")
    write_synthetic_sources(root)
    return root


@pytest.fixture(scope="session")
def store(synthetic_root) -> SourceStore:
    return SourceStore(synthetic_root)


def real_data_available() -> bool:
    probe = SourceStore(disk_cache=False)
    try:
        probe.class_count(Source.MNIST, Split.TRAIN, 0)
        probe.class_count(Source.CIFAR10, Split.TRAIN, 0)
    except DataNotFoundError:
        return False
    return True


needs_real_data = pytest.mark.skipif(
    not real_data_available(),
    reason="MNIST/CIFAR-10 not found under $COUPLAB_DATA_DIR (see README for setup)")


@pytest.fixture(scope="session")
def real_store() -> SourceStore:
    return SourceStore()
