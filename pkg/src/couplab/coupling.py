"""Imbalanced label coupling: composed train/test sets built by channel stacking.

A coupling tree lists the participating sources coarse-to-fine and maps every
class of one level to the classes of the next level it is coupled with. Labels
come from the last (fine) level only; each fine class is reachable through
exactly one path, so fine classes and labels are in bijection.

Training sets couple each fine image with randomly drawn partners from the
coarse classes on its path (seeded, with replacement). Test sets cross every
selected class of every level, 1000 examples per combination, pairing source
images by index modulo each class's test count so rebuilding is bit-exact.

Composed datasets persist to ``.npz`` containers holding the uint8 pixel
block, labels, per-level provenance (class ids and source indices), and a JSON
header with the tree, split, seed, and content hash.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sources import IMAGE_SIZE, SOURCE_CHANNELS, Source, SourceStore, Split

TRAIN_PER_CLASS = 5000
TEST_PER_COMBINATION = 1000

GroupKey = tuple


@dataclass(frozen=True)
class LevelSpec:
    source: Source
    classes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"duplicate classes in level: {self.classes}")


class CouplingTree:
    """Multi-level coarse-to-fine class coupling defining a synthetic dataset.

    `levels` orders the sources coarse first; `edges[i]` maps each class id of
    level i to the tuple of level-(i+1) class ids it is coupled with. Every
    non-root class must have exactly one parent (the coupled subsets partition
    the label space).
    """

    def __init__(self, levels: list[LevelSpec], edges: list[dict[int, tuple[int, ...]]]):
        if len(levels) < 2:
            raise ValueError("a coupling tree needs at least 2 levels")
        if len(edges) != len(levels) - 1:
            raise ValueError("need exactly one edge map per adjacent level pair")
        self.levels = [lv if isinstance(lv, LevelSpec) else LevelSpec(**lv) for lv in levels]
        self.edges = [{int(k): tuple(int(c) for c in v) for k, v in e.items()} for e in edges]
        self._validate()
        self.leaf_paths: list[tuple[int, ...]] = self._enumerate_leaves()
        self._label_by_fine = {path[-1]: label for label, path in enumerate(self.leaf_paths)}

    def _validate(self):
        for i, edge in enumerate(self.edges):
            parents = set(self.levels[i].classes)
            if set(edge) != parents:
                raise ValueError(f"edge map {i} keys {sorted(edge)} != level classes {sorted(parents)}")
            children: list[int] = []
            for parent in self.levels[i].classes:
                if not edge[parent]:
                    raise ValueError(f"class {parent} at level {i} has no children")
                children.extend(edge[parent])
            if len(children) != len(set(children)):
                raise ValueError(f"edge map {i} assigns some class two parents")
            if set(children) != set(self.levels[i + 1].classes):
                raise ValueError(
                    f"edge map {i} children {sorted(set(children))} != level-{i + 1} "
                    f"classes {sorted(self.levels[i + 1].classes)}")

    def _enumerate_leaves(self) -> list[tuple[int, ...]]:
        paths = [(c,) for c in self.levels[0].classes]
        for edge in self.edges:
            paths = [path + (child,) for path in paths for child in edge[path[-1]]]
        return paths

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_labels(self) -> int:
        return len(self.leaf_paths)

    @property
    def channels(self) -> int:
        return sum(SOURCE_CHANNELS[lv.source] for lv in self.levels)

    def label_of_fine_class(self, fine_class: int) -> int:
        return self._label_by_fine[fine_class]

    def label_names(self, class_names: dict[Source, list[str] | None] | None = None) -> list[str]:
        names = []
        for path in self.leaf_paths:
            source = self.levels[-1].source
            per_source = (class_names or {}).get(source)
            names.append(per_source[path[-1]] if per_source else f"{source.value}{path[-1]}")
        return names

    def subsets(self, depth: int = 1) -> dict[GroupKey, frozenset[int]]:
        """Map each depth-long coarse path prefix to its coupled label set."""
        if not 1 <= depth < self.n_levels:
            raise ValueError(f"depth must be in 1..{self.n_levels - 1}, got {depth}")
        out: dict[GroupKey, set[int]] = {}
        for label, path in enumerate(self.leaf_paths):
            out.setdefault(path[:depth], set()).add(label)
        return {k: frozenset(v) for k, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "levels": [{"source": lv.source.value, "classes": list(lv.classes)}
                       for lv in self.levels],
            "edges": [{str(k): list(v) for k, v in e.items()} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CouplingTree":
        levels = [LevelSpec(Source(lv["source"]), tuple(lv["classes"]))
                  for lv in data["levels"]]
        edges = [{int(k): tuple(v) for k, v in e.items()} for e in data["edges"]]
        return cls(levels, edges)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def __eq__(self, other):
        return isinstance(other, CouplingTree) and self.to_dict() == other.to_dict()

    def __repr__(self):
        parts = "-".join(lv.source.value for lv in self.levels)
        return f"CouplingTree({parts}, {self.n_labels} labels)"


@dataclass
class ComposedDataset:
    """Channel-stacked examples with labels and per-level provenance.

    `pixels` is uint8 (exact for all sources); `prov_classes[i, l]` and
    `prov_indices[i, l]` record which source class and image index supplied
    level l of example i.
    """

    pixels: np.ndarray      # uint8, N x C x 32 x 32
    labels: np.ndarray      # int64, N
    prov_classes: np.ndarray  # int64, N x n_levels
    prov_indices: np.ndarray  # int64, N x n_levels
    tree: CouplingTree
    split: Split
    seed: int

    def __len__(self) -> int:
        return len(self.labels)

    def images_float(self, idx=slice(None)) -> np.ndarray:
        return self.pixels[idx].astype(np.float32) / 255.0

    def group_key(self, i: int, depth: int = 1) -> GroupKey:
        if not 1 <= depth < self.tree.n_levels:
            raise ValueError(f"depth must be in 1..{self.tree.n_levels - 1}, got {depth}")
        return tuple(int(c) for c in self.prov_classes[i, :depth])

    def group_keys(self, depth: int = 1) -> list[GroupKey]:
        return [self.group_key(i, depth) for i in range(len(self))]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.pixels, self.labels, self.prov_classes, self.prov_indices):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.tree.content_hash().encode())
        h.update(self.split.value.encode())
        return h.hexdigest()

    def save(self, path: Path | str) -> None:
        header = json.dumps({
            "tree": self.tree.to_dict(),
            "split": self.split.value,
            "seed": self.seed,
            "count": len(self),
            "shape": list(self.pixels.shape[1:]),
            "tree_hash": self.tree.content_hash(),
            "content_hash": self.content_hash(),
        })
        np.savez_compressed(path, pixels=self.pixels, labels=self.labels,
                            prov_classes=self.prov_classes,
                            prov_indices=self.prov_indices,
                            header=np.frombuffer(header.encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path: Path | str) -> "ComposedDataset":
        with np.load(path) as npz:
            header = json.loads(npz["header"].tobytes().decode())
            ds = cls(pixels=npz["pixels"], labels=npz["labels"],
                     prov_classes=npz["prov_classes"], prov_indices=npz["prov_indices"],
                     tree=CouplingTree.from_dict(header["tree"]),
                     split=Split(header["split"]), seed=header["seed"])
        if ds.content_hash() != header["content_hash"]:
            raise ValueError(f"content hash mismatch loading {path}")
        return ds


def _stack_channels(store: SourceStore, tree: CouplingTree, split: Split,
                    path: tuple[int, ...], indices: tuple[int, ...]) -> np.ndarray:
    chunks = []
    for level, (class_id, idx) in enumerate(zip(path, indices)):
        images = store.class_images(tree.levels[level].source, split, class_id)
        chunks.append(images[idx])
    return np.concatenate(chunks, axis=0)


def build_train(tree: CouplingTree, seed: int, store: SourceStore | None = None,
                per_class: int = TRAIN_PER_CLASS) -> ComposedDataset:
    """Coupled training set: `per_class` examples per label.

    Fine-channel images enumerate the fine class's training images (index
    modulo its count); every coarse channel is drawn uniformly with
    replacement from the coupled class, with randomness derived from
    (seed, label, level) so construction order never matters.
    """
    store = store or SourceStore()
    n = tree.n_labels * per_class
    pixels = np.empty((n, tree.channels, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    prov_classes = np.empty((n, tree.n_levels), dtype=np.int64)
    prov_indices = np.empty((n, tree.n_levels), dtype=np.int64)

    row = 0
    for label, path in enumerate(tree.leaf_paths):
        counts = [store.class_count(tree.levels[lv].source, Split.TRAIN, path[lv])
                  for lv in range(tree.n_levels)]
        if counts[-1] == 0:
            raise ValueError(f"fine class {path[-1]} has no training images")
        index_cols = []
        for level in range(tree.n_levels - 1):
            rng = np.random.default_rng(np.random.SeedSequence([seed, label, level]))
            index_cols.append(rng.integers(0, counts[level], size=per_class))
        index_cols.append(np.arange(per_class) % counts[-1])
        for k in range(per_class):
            indices = tuple(int(col[k]) for col in index_cols)
            pixels[row] = _stack_channels(store, tree, Split.TRAIN, path, indices)
            labels[row] = label
            prov_classes[row] = path
            prov_indices[row] = indices
            row += 1
    return ComposedDataset(pixels, labels, prov_classes, prov_indices,
                           tree, Split.TRAIN, seed)


def build_test(tree: CouplingTree, seed: int = 0, store: SourceStore | None = None,
               per_combination: int = TEST_PER_COMBINATION) -> ComposedDataset:
    """Fully crossed test set: `per_combination` examples per class combination.

    The k-th example of a combination takes the k-th test image of each source
    class, index modulo that class's test count; construction is deterministic
    and `seed` is recorded for provenance only.
    """
    store = store or SourceStore()
    combos = list(itertools.product(*(lv.classes for lv in tree.levels)))
    n = len(combos) * per_combination
    pixels = np.empty((n, tree.channels, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    prov_classes = np.empty((n, tree.n_levels), dtype=np.int64)
    prov_indices = np.empty((n, tree.n_levels), dtype=np.int64)

    row = 0
    for combo in combos:
        counts = [store.class_count(tree.levels[lv].source, Split.TEST, combo[lv])
                  for lv in range(tree.n_levels)]
        label = tree.label_of_fine_class(combo[-1])
        for k in range(per_combination):
            indices = tuple(k % c for c in counts)
            pixels[row] = _stack_channels(store, tree, Split.TEST, combo, indices)
            labels[row] = label
            prov_classes[row] = combo
            prov_indices[row] = indices
            row += 1
    return ComposedDataset(pixels, labels, prov_classes, prov_indices,
                           tree, Split.TEST, seed)


def group_key(dataset: ComposedDataset, i: int, depth: int = 1) -> GroupKey:
    """The first `depth` coarse class ids of example i."""
    return dataset.group_key(i, depth)
