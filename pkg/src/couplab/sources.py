"""Building-block image sources: corner patches, MNIST, and CIFAR-10.

All sources are exposed in a uniform 32x32 geometry. Images are kept as uint8
internally (exact for every source) and converted to float32 in [0, 1] at the
accessor boundary.

MNIST and CIFAR-10 are read from their standard distribution formats under a
data root directory, resolved from the ``COUPLAB_DATA_DIR`` environment
variable (default ``./data``). Decoded per-class arrays are cached as ``.npz``
files under ``<data_root>/cache/`` (one file per source and split, one uint8
array of shape N x C x 32 x 32 per class, keyed ``class_<id>``).
"""

from __future__ import annotations

import gzip
import os
import pickle
import struct
import threading
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

IMAGE_SIZE = 32
MNIST_PAD = 2  # symmetric border taking 28x28 digits to 32x32


class Source(str, Enum):
    PATCH = "patch"
    MNIST = "mnist"
    CIFAR10 = "cifar10"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class PatchCorner(IntEnum):
    UPPER_LEFT = 0
    UPPER_RIGHT = 1
    LOWER_LEFT = 2
    LOWER_RIGHT = 3


SOURCE_CHANNELS = {Source.PATCH: 1, Source.MNIST: 1, Source.CIFAR10: 3}

CIFAR10_CLASS_NAMES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


class DataNotFoundError(RuntimeError):
    """Raised when a source dataset is missing from the data root."""


@dataclass(frozen=True)
class SourceImage:
    """One 32x32 source image with its provenance."""

    pixels: np.ndarray  # float32, channels x 32 x 32, values in [0, 1]
    source: Source
    class_id: int
    split: Split
    index: int


def data_root() -> Path:
    return Path(os.environ.get("COUPLAB_DATA_DIR", "data"))


def _patch_bitmap(corner: PatchCorner) -> np.ndarray:
    half = IMAGE_SIZE // 2
    img = np.zeros((1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    row0 = 0 if corner in (PatchCorner.UPPER_LEFT, PatchCorner.UPPER_RIGHT) else half
    col0 = 0 if corner in (PatchCorner.UPPER_LEFT, PatchCorner.LOWER_LEFT) else half
    img[0, row0:row0 + half, col0:col0 + half] = 255
    return img


def make_patch(corner: PatchCorner) -> SourceImage:
    """A deterministic 1x32x32 image with a white 16x16 quadrant at `corner`."""
    corner = PatchCorner(corner)
    pixels = _patch_bitmap(corner).astype(np.float32) / 255.0
    return SourceImage(pixels=pixels, source=Source.PATCH, class_id=int(corner),
                       split=Split.TRAIN, index=0)


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        magic, = struct.unpack(">i", fh.read(4))
        ndim = magic & 0xFF
        dims = struct.unpack(">" + "i" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(dims)


def _find_file(root: Path, names: list[str]) -> Path | None:
    for name in names:
        p = root / name
        if p.exists():
            return p
    return None


_MNIST_FILES = {
    (Split.TRAIN, "images"): ["train-images-idx3-ubyte.gz", "train-images-idx3-ubyte",
                              "train-images.idx3-ubyte"],
    (Split.TRAIN, "labels"): ["train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte",
                              "train-labels.idx1-ubyte"],
    (Split.TEST, "images"): ["t10k-images-idx3-ubyte.gz", "t10k-images-idx3-ubyte",
                             "t10k-images.idx3-ubyte"],
    (Split.TEST, "labels"): ["t10k-labels-idx1-ubyte.gz", "t10k-labels-idx1-ubyte",
                             "t10k-labels.idx1-ubyte"],
}

_MNIST_HELP = (
    "MNIST not found under {root}. Place the four IDX files "
    "(train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz, "
    "t10k-images-idx3-ubyte.gz, t10k-labels-idx1-ubyte.gz) in {root}/mnist/, "
    "e.g. from https://ossci-datasets.s3.amazonaws.com/mnist/"
)

_CIFAR_HELP = (
    "CIFAR-10 not found under {root}. Download cifar-10-python.tar.gz from "
    "https://www.cs.toronto.edu/~kriz/cifar.html and extract it so that "
    "{root}/cifar-10-batches-py/data_batch_1 exists."
)


def _load_mnist_raw(root: Path, split: Split) -> tuple[np.ndarray, np.ndarray]:
    mnist_dir = root / "mnist"
    images_path = _find_file(mnist_dir, _MNIST_FILES[(split, "images")])
    labels_path = _find_file(mnist_dir, _MNIST_FILES[(split, "labels")])
    if images_path is None or labels_path is None:
        raise DataNotFoundError(_MNIST_HELP.format(root=root))
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.shape[1:] != (28, 28) or len(images) != len(labels):
        raise DataNotFoundError(f"corrupt MNIST files under {mnist_dir}")
    padded = np.zeros((len(images), 1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    padded[:, 0, MNIST_PAD:MNIST_PAD + 28, MNIST_PAD:MNIST_PAD + 28] = images
    return padded, labels.astype(np.int64)


def _load_cifar_raw(root: Path, split: Split) -> tuple[np.ndarray, np.ndarray]:
    batch_dir = root / "cifar-10-batches-py"
    names = [f"data_batch_{i}" for i in range(1, 6)] if split is Split.TRAIN else ["test_batch"]
    images, labels = [], []
    for name in names:
        path = batch_dir / name
        if not path.exists():
            raise DataNotFoundError(_CIFAR_HELP.format(root=root))
        with open(path, "rb") as fh:
            batch = pickle.load(fh, encoding="bytes")
        images.append(np.asarray(batch[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32))
        labels.append(np.asarray(batch[b"labels"], dtype=np.int64))
    return np.concatenate(images), np.concatenate(labels)


class SourceStore:
    """Seedless, deterministic access to per-class source images.

    Decoding happens once per (source, split) and is cached both in memory and
    on disk; reads afterwards are pure and safe for concurrent use.
    """

    def __init__(self, root: Path | str | None = None, disk_cache: bool = True):
        self.root = Path(root) if root is not None else data_root()
        self.disk_cache = disk_cache
        self._by_class: dict[tuple[Source, Split], dict[int, np.ndarray]] = {}
        self._lock = threading.Lock()

    def _cache_path(self, source: Source, split: Split) -> Path:
        return self.root / "cache" / f"{source.value}_{split.value}.npz"

    def _load_split(self, source: Source, split: Split) -> dict[int, np.ndarray]:
        key = (source, split)
        if key in self._by_class:
            return self._by_class[key]
        with self._lock:
            if key in self._by_class:
                return self._by_class[key]
            if source is Source.PATCH:
                by_class = {int(c): _patch_bitmap(c)[None] for c in PatchCorner}
            else:
                cache = self._cache_path(source, split)
                if self.disk_cache and cache.exists():
                    with np.load(cache) as npz:
                        by_class = {int(k.split("_")[1]): npz[k] for k in npz.files}
                else:
                    loader = _load_mnist_raw if source is Source.MNIST else _load_cifar_raw
                    images, labels = loader(self.root, split)
                    by_class = {c: images[labels == c] for c in range(10)}
                    if self.disk_cache:
                        cache.parent.mkdir(parents=True, exist_ok=True)
                        np.savez(cache, **{f"class_{c}": a for c, a in by_class.items()})
            self._by_class[key] = by_class
            return by_class

    def class_images(self, source: Source, split: Split, class_id: int) -> np.ndarray:
        """All images of one class as a uint8 array N x C x 32 x 32."""
        by_class = self._load_split(source, split)
        if class_id not in by_class:
            raise ValueError(f"{source.value} has no class {class_id}")
        return by_class[class_id]

    def class_count(self, source: Source, split: Split, class_id: int) -> int:
        return len(self.class_images(source, split, class_id))

    def get(self, source: Source, class_id: int, split: Split, index: int) -> SourceImage:
        images = self.class_images(source, split, class_id)
        if not 0 <= index < len(images):
            raise IndexError(
                f"index {index} out of range for {source.value} class {class_id} "
                f"{split.value} (have {len(images)} images)")
        pixels = images[index].astype(np.float32) / 255.0
        return SourceImage(pixels=pixels, source=source, class_id=class_id,
                           split=split, index=index)


def load_mnist(class_id: int, split: Split, index: int,
               store: SourceStore | None = None) -> SourceImage:
    """A zero-padded 1x32x32 MNIST digit, scaled to [0, 1]."""
    if not 0 <= class_id <= 9:
        raise ValueError(f"MNIST class_id must be in 0..9, got {class_id}")
    store = store or SourceStore()
    return store.get(Source.MNIST, class_id, split, index)


def load_cifar(class_id: int, split: Split, index: int,
               store: SourceStore | None = None) -> SourceImage:
    """A 3x32x32 CIFAR-10 image in [0, 1]."""
    if not 0 <= class_id <= 9:
        raise ValueError(f"CIFAR-10 class_id must be in 0..9, got {class_id}")
    store = store or SourceStore()
    return store.get(Source.CIFAR10, class_id, split, index)
