"""Non-concatenation datasets: half-inverted MNIST and corruption-coupled CIFAR-10.

Corruptions follow the CIFAR-scale constants of the common-corruptions
benchmark at severity 3:

    gaussian noise   sigma = 0.08 (in [0, 1] space)
    defocus blur     disk radius 0.5, alias blur 0.6
    fog              haze strength 0.75, plasma-fractal wibble decay 2.5
    brightness       HSV value shift +0.15

Corrupted outputs are clipped to [0, 1] and re-quantized to uint8, matching
how the benchmark distributes its corrupted sets. Corruption happens once at
dataset build time (static dataset), with per-image randomness derived from
(seed, class, index).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import cv2
import numpy as np
import skimage.color

from .coupling import GroupKey
from .sources import Source, SourceImage, SourceStore, Split


class CorruptionKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    DEFOCUS_BLUR = "defocus_blur"
    FOG = "fog"
    BRIGHTNESS = "brightness"
    NONE = "none"


# severity -> parameter, CIFAR-scale constants of the reference benchmark
_GAUSSIAN_SIGMA = [0.04, 0.06, 0.08, 0.09, 0.10]
_DEFOCUS = [(0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (1.0, 0.2), (1.5, 0.1)]
_FOG = [(0.2, 3.0), (0.5, 3.0), (0.75, 2.5), (1.0, 2.0), (1.5, 1.75)]
_BRIGHTNESS = [0.05, 0.10, 0.15, 0.20, 0.30]

DEFAULT_SEVERITY = 3

# training coupling of the corrupted CIFAR-10 protocol
DEFAULT_CORRUPTION_PAIRS = {
    CorruptionKind.GAUSSIAN_NOISE: (0, 1),
    CorruptionKind.DEFOCUS_BLUR: (2, 3),
    CorruptionKind.FOG: (4, 5),
    CorruptionKind.BRIGHTNESS: (6, 7),
    CorruptionKind.NONE: (8, 9),
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int = DEFAULT_SEVERITY
    target_classes: tuple[int, int] = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")


def default_corruption_specs(severity: int = DEFAULT_SEVERITY) -> list[CorruptionSpec]:
    return [CorruptionSpec(kind, severity, pair)
            for kind, pair in DEFAULT_CORRUPTION_PAIRS.items()]


@dataclass
class LabeledImageSet:
    """Plain labeled image block (uint8 N x C x 32 x 32), trainable as-is."""

    pixels: np.ndarray
    labels: np.ndarray
    name: str

    def __len__(self) -> int:
        return len(self.labels)

    def images_float(self, idx=slice(None)) -> np.ndarray:
        return self.pixels[idx].astype(np.float32) / 255.0

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.pixels).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _disk_kernel(radius: float, alias_blur: float) -> np.ndarray:
    if radius <= 8:
        coords = np.arange(-8, 9)
        ksize = (3, 3)
    else:
        coords = np.arange(-radius, radius + 1)
        ksize = (5, 5)
    xx, yy = np.meshgrid(coords, coords)
    kernel = np.array(xx ** 2 + yy ** 2 <= radius ** 2, dtype=np.float32)
    kernel /= kernel.sum()
    return cv2.GaussianBlur(kernel, ksize=ksize, sigmaX=alias_blur)


def plasma_fractal(rng: np.random.Generator, mapsize: int = 32,
                   wibbledecay: float = 3.0) -> np.ndarray:
    """Diamond-square heightmap in [0, 1]; `mapsize` must be a power of two."""
    if mapsize & (mapsize - 1):
        raise ValueError("mapsize must be a power of two")
    maparray = np.empty((mapsize, mapsize), dtype=np.float64)
    maparray[0, 0] = 0
    stepsize = mapsize
    wibble = 100.0

    def wibbledmean(array):
        return array / 4 + wibble * rng.uniform(-wibble, wibble, array.shape)

    def fillsquares():
        corners = maparray[0:mapsize:stepsize, 0:mapsize:stepsize]
        accum = corners + np.roll(corners, shift=-1, axis=0)
        accum += np.roll(accum, shift=-1, axis=1)
        maparray[stepsize // 2:mapsize:stepsize,
                 stepsize // 2:mapsize:stepsize] = wibbledmean(accum)

    def filldiamonds():
        drgrid = maparray[stepsize // 2:mapsize:stepsize, stepsize // 2:mapsize:stepsize]
        ulgrid = maparray[0:mapsize:stepsize, 0:mapsize:stepsize]
        ldrsum = drgrid + np.roll(drgrid, 1, axis=0)
        lulsum = ulgrid + np.roll(ulgrid, -1, axis=1)
        maparray[0:mapsize:stepsize, stepsize // 2:mapsize:stepsize] = \
            wibbledmean(ldrsum + lulsum)
        tdrsum = drgrid + np.roll(drgrid, 1, axis=1)
        tulsum = ulgrid + np.roll(ulgrid, -1, axis=0)
        maparray[stepsize // 2:mapsize:stepsize, 0:mapsize:stepsize] = \
            wibbledmean(tdrsum + tulsum)

    while stepsize >= 2:
        fillsquares()
        filldiamonds()
        stepsize //= 2
        wibble /= wibbledecay

    maparray -= maparray.min()
    return maparray / maparray.max()


def _corrupt_hwc(img: np.ndarray, spec: CorruptionSpec,
                 rng: np.random.Generator) -> np.ndarray:
    """Apply one corruption to a float H x W x 3 image in [0, 1]."""
    if spec.kind is CorruptionKind.NONE:
        return img
    if spec.kind is CorruptionKind.GAUSSIAN_NOISE:
        sigma = _GAUSSIAN_SIGMA[spec.severity - 1]
        return np.clip(img + rng.normal(size=img.shape, scale=sigma), 0, 1)
    if spec.kind is CorruptionKind.DEFOCUS_BLUR:
        radius, alias = _DEFOCUS[spec.severity - 1]
        kernel = _disk_kernel(radius, alias)
        channels = [cv2.filter2D(img[:, :, d], -1, kernel) for d in range(3)]
        return np.clip(np.stack(channels, axis=-1), 0, 1)
    if spec.kind is CorruptionKind.FOG:
        strength, decay = _FOG[spec.severity - 1]
        max_val = img.max()
        haze = plasma_fractal(rng, mapsize=32, wibbledecay=decay)[..., np.newaxis]
        out = img + strength * haze
        return np.clip(out * max_val / (max_val + strength), 0, 1)
    if spec.kind is CorruptionKind.BRIGHTNESS:
        shift = _BRIGHTNESS[spec.severity - 1]
        hsv = skimage.color.rgb2hsv(img)
        hsv[:, :, 2] = np.clip(hsv[:, :, 2] + shift, 0, 1)
        return np.clip(skimage.color.hsv2rgb(hsv), 0, 1)
    raise ValueError(f"unsupported corruption kind {spec.kind}")


def corrupt(image: SourceImage, spec: CorruptionSpec, seed: int = 0) -> SourceImage:
    """Corrupted copy of a 3-channel source image, clipped to [0, 1]."""
    if image.pixels.shape[0] != 3:
        raise ValueError("corruptions require a 3-channel image")
    rng = np.random.default_rng(np.random.SeedSequence([seed, image.class_id, image.index]))
    hwc = image.pixels.transpose(1, 2, 0).astype(np.float64)
    out = _corrupt_hwc(hwc, spec, rng)
    if spec.kind is not CorruptionKind.NONE:
        out = np.round(out * 255.0) / 255.0  # uint8 quantization, reference convention
    return SourceImage(pixels=out.transpose(2, 0, 1).astype(np.float32),
                       source=image.source, class_id=image.class_id,
                       split=image.split, index=image.index)


def _corrupt_block(images: np.ndarray, spec: CorruptionSpec, seed: int,
                   class_id: int) -> np.ndarray:
    """Corrupt a uint8 N x 3 x 32 x 32 block, returning uint8."""
    if spec.kind is CorruptionKind.NONE:
        return images.copy()
    out = np.empty_like(images)
    for i in range(len(images)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, class_id, i]))
        hwc = images[i].transpose(1, 2, 0).astype(np.float64) / 255.0
        corrupted = _corrupt_hwc(hwc, spec, rng)
        out[i] = np.round(np.clip(corrupted, 0, 1) * 255.0).astype(np.uint8).transpose(2, 0, 1)
    return out


def build_half_inverted_mnist(split: str, store: SourceStore | None = None) -> LabeledImageSet:
    """MNIST with colors of digits 0-4 inverted during training.

    Splits: 'train' (digits 0-4 inverted, 5-9 untouched), 'test_original'
    (raw test set), 'test_inverted' (whole test set inverted).
    """
    if split not in ("train", "test_original", "test_inverted"):
        raise ValueError(f"unknown split {split!r}")
    store = store or SourceStore()
    src_split = Split.TRAIN if split == "train" else Split.TEST
    pixels, labels = [], []
    for class_id in range(10):
        block = store.class_images(Source.MNIST, src_split, class_id).copy()
        if split == "test_inverted" or (split == "train" and class_id <= 4):
            block = 255 - block
        pixels.append(block)
        labels.append(np.full(len(block), class_id, dtype=np.int64))
    return LabeledImageSet(pixels=np.concatenate(pixels), labels=np.concatenate(labels),
                           name=f"half_inverted_mnist_{split}")


HALF_INVERTED_SUBSETS: dict[GroupKey, frozenset[int]] = {
    ("white_background",): frozenset(range(0, 5)),  # inverted digits at train time
    ("black_background",): frozenset(range(5, 10)),
}


def build_corrupted_cifar(specs: list[CorruptionSpec] | None = None, seed: int = 0,
                          store: SourceStore | None = None,
                          ) -> tuple[LabeledImageSet, LabeledImageSet, np.ndarray]:
    """Corruption-coupled CIFAR-10 train set and 5x test set.

    Train: each class corrupted per its spec. Test: the clean 10000-image test
    set plus one fully corrupted copy per non-clean corruption kind, 50000
    samples, labels unchanged. Also returns the per-test-sample group key
    array (corruption kind applied to that copy).
    """
    specs = specs if specs is not None else default_corruption_specs()
    spec_by_class: dict[int, CorruptionSpec] = {}
    for spec in specs:
        for c in spec.target_classes:
            if c in spec_by_class:
                raise ValueError(f"class {c} appears in two corruption specs")
            spec_by_class[c] = spec
    if sorted(spec_by_class) != list(range(10)):
        raise ValueError("corruption specs must cover all 10 CIFAR classes exactly once")

    store = store or SourceStore()

    train_pixels, train_labels = [], []
    for class_id in range(10):
        block = store.class_images(Source.CIFAR10, Split.TRAIN, class_id)
        train_pixels.append(_corrupt_block(block, spec_by_class[class_id], seed, class_id))
        train_labels.append(np.full(len(block), class_id, dtype=np.int64))
    train = LabeledImageSet(np.concatenate(train_pixels), np.concatenate(train_labels),
                            "corrupted_cifar10_train")

    clean_pixels = [store.class_images(Source.CIFAR10, Split.TEST, c) for c in range(10)]
    clean_labels = [np.full(len(p), c, dtype=np.int64) for c, p in enumerate(clean_pixels)]
    kinds = [CorruptionKind.NONE] + sorted(
        {s.kind for s in specs if s.kind is not CorruptionKind.NONE},
        key=lambda k: k.value)
    test_pixels, test_labels, test_groups = [], [], []
    severity = specs[0].severity
    for kind in kinds:
        spec = CorruptionSpec(kind, severity)
        for class_id in range(10):
            test_pixels.append(_corrupt_block(clean_pixels[class_id], spec,
                                              seed + 1, class_id))
            test_labels.append(clean_labels[class_id])
            test_groups.extend([kind.value] * len(clean_labels[class_id]))
    test = LabeledImageSet(np.concatenate(test_pixels), np.concatenate(test_labels),
                           "corrupted_cifar10_test")
    return train, test, np.array(test_groups)


def corruption_subsets(specs: list[CorruptionSpec] | None = None
                       ) -> dict[GroupKey, frozenset[int]]:
    """Group key (corruption kind) -> the class pair coupled with it in training."""
    specs = specs if specs is not None else default_corruption_specs()
    return {(spec.kind.value,): frozenset(spec.target_classes) for spec in specs}
