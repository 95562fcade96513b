"""Grouped confusion matrices and the hierarchical-bias metrics.

Matrices use the orientation CM[predicted, true]. Metric functions take the
coupled label subsets as a mapping ``group key -> set of labels``; for a
coupling tree this is ``tree.subsets(depth)``, and variant datasets supply
their own mapping (e.g. corruption kind -> coupled class pair).

Metrics:
  * HCA: chance-normalized modal-prediction accuracy within a group's subset
    for one true label; range [-1/(k-1), 1] for a subset of size k.
  * AHCA: unweighted mean of HCA over all (group, label) cells with samples.
  * PCS: mean per-class recall on the aggregate matrix.
  * semantic accuracy: fraction of samples whose prediction lands in the same
    semantic group (e.g. vehicle/animal) as the truth.
  * containment: fraction of a group's predictions inside its coupled subset.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Collection, Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GroupKey = tuple
Subsets = Mapping[GroupKey, Collection[int]]


class UndefinedMetricError(ValueError):
    """A metric was requested on cells with no samples."""


class GroupedConfusionMatrix:
    """Per-group label x label prediction counts plus their aggregate."""

    def __init__(self, n_labels: int,
                 groups: Mapping[GroupKey, np.ndarray] | None = None):
        if n_labels < 1:
            raise ValueError("n_labels must be positive")
        self.n_labels = n_labels
        self.groups: dict[GroupKey, np.ndarray] = {}
        for key, mat in (groups or {}).items():
            mat = np.asarray(mat, dtype=np.int64)
            if mat.shape != (n_labels, n_labels):
                raise ValueError(f"group {key}: expected {n_labels}x{n_labels} matrix")
            if (mat < 0).any():
                raise ValueError(f"group {key}: negative counts")
            self.groups[tuple(key)] = mat

    @property
    def aggregate(self) -> np.ndarray:
        total = np.zeros((self.n_labels, self.n_labels), dtype=np.int64)
        for mat in self.groups.values():
            total += mat
        return total

    def counts(self, group: GroupKey) -> np.ndarray:
        if group not in self.groups:
            raise KeyError(f"no samples for group {group}")
        return self.groups[group]

    def n_true(self, group: GroupKey, y: int) -> int:
        """N_{g,y}: samples with true label y in the group (column sum)."""
        return int(self.counts(group)[:, y].sum())

    def merged_to_depth(self, depth: int) -> "GroupedConfusionMatrix":
        """Sum groups whose keys share the same length-`depth` prefix."""
        merged: dict[GroupKey, np.ndarray] = {}
        for key, mat in self.groups.items():
            if len(key) < depth:
                raise ValueError(f"group key {key} shorter than depth {depth}")
            prefix = key[:depth]
            merged[prefix] = merged.get(prefix, 0) + mat
        return GroupedConfusionMatrix(self.n_labels, merged)


def confusion(records: Iterable[tuple[GroupKey, int, int]],
              n_labels: int) -> GroupedConfusionMatrix:
    """Tally (group key, true label, predicted label) records."""
    groups: dict[GroupKey, np.ndarray] = {}
    for key, true, pred in records:
        if not (0 <= true < n_labels and 0 <= pred < n_labels):
            raise ValueError(f"label out of range 0..{n_labels - 1}: ({true}, {pred})")
        key = tuple(key)
        if key not in groups:
            groups[key] = np.zeros((n_labels, n_labels), dtype=np.int64)
        groups[key][pred, true] += 1
    return GroupedConfusionMatrix(n_labels, groups)


def _subset_list(subsets: Subsets, group: GroupKey) -> list[int]:
    if group not in subsets:
        raise KeyError(f"group {group} has no coupled label subset")
    members = sorted(subsets[group])
    if len(members) < 2:
        raise ValueError(f"subset for group {group} must have >= 2 labels")
    return members


def hca(cm: GroupedConfusionMatrix, subsets: Subsets, group: GroupKey, y: int) -> float:
    """Chance-normalized within-subset modal accuracy for true label y."""
    members = _subset_list(subsets, group)
    n_y = cm.n_true(group, y)
    if n_y == 0:
        raise UndefinedMetricError(f"no samples with true label {y} in group {group}")
    acc = int(cm.counts(group)[members, y].max()) / n_y
    chance = 1.0 / len(members)
    return (acc - chance) / (1.0 - chance)


def ahca(cm: GroupedConfusionMatrix, subsets: Subsets) -> float:
    """Unweighted mean of HCA over all (group, label) cells with samples."""
    values = []
    for group in cm.groups:
        for y in range(cm.n_labels):
            if cm.n_true(group, y) > 0:
                values.append(hca(cm, subsets, group, y))
    if not values:
        raise UndefinedMetricError("no (group, label) cells with samples")
    return float(np.mean(values))


def pcs(cm: GroupedConfusionMatrix) -> float:
    """Mean per-class recall on the aggregate matrix."""
    agg = cm.aggregate
    n_y = agg.sum(axis=0)
    if (n_y == 0).any():
        missing = np.flatnonzero(n_y == 0).tolist()
        raise UndefinedMetricError(f"labels with no samples: {missing}")
    return float(np.mean(np.diag(agg) / n_y))


def semantic_accuracy(cm: GroupedConfusionMatrix,
                      semantic_groups: Mapping[int, int]) -> float:
    """Fraction of samples predicted in the true label's semantic group."""
    for y in range(cm.n_labels):
        if y not in semantic_groups:
            raise ValueError(f"label {y} has no semantic group")
    agg = cm.aggregate
    total = agg.sum()
    if total == 0:
        raise UndefinedMetricError("empty confusion matrix")
    correct = sum(agg[pred, true]
                  for pred in range(cm.n_labels) for true in range(cm.n_labels)
                  if semantic_groups[pred] == semantic_groups[true])
    return float(correct / total)


def containment(cm: GroupedConfusionMatrix, subsets: Subsets, group: GroupKey) -> float:
    """Fraction of the group's predictions that fall inside its subset."""
    mat = cm.counts(group)
    total = mat.sum()
    if total == 0:
        raise UndefinedMetricError(f"group {group} is empty")
    members = sorted(subsets[group]) if group in subsets else None
    if members is None:
        raise KeyError(f"group {group} has no coupled label subset")
    return float(mat[members, :].sum() / total)


def accuracy(cm: GroupedConfusionMatrix) -> float:
    agg = cm.aggregate
    total = agg.sum()
    if total == 0:
        raise UndefinedMetricError("empty confusion matrix")
    return float(np.trace(agg) / total)


@dataclass
class MetricsReport:
    """All metrics for one evaluated run, JSON-serializable."""

    hca: dict[tuple[GroupKey, int], float]
    ahca: float
    pcs: float
    accuracy: float
    containment: dict[GroupKey, float]
    semantic_accuracy: float | None = None
    ahca_by_depth: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ahca": self.ahca,
            "pcs": self.pcs,
            "accuracy": self.accuracy,
            "semantic_accuracy": self.semantic_accuracy,
            "ahca_by_depth": {str(d): v for d, v in self.ahca_by_depth.items()},
            "hca": [{"group": list(g), "label": y, "value": v}
                    for (g, y), v in self.hca.items()],
            "containment": [{"group": list(g), "value": v}
                            for g, v in self.containment.items()],
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def compute_report(cm: GroupedConfusionMatrix,
                   subsets_by_depth: Mapping[int, Subsets],
                   semantic_groups: Mapping[int, int] | None = None) -> MetricsReport:
    """Evaluate every metric; `cm` must be grouped at the deepest depth."""
    depths = sorted(subsets_by_depth)
    deepest = depths[-1]
    ahca_by_depth = {d: ahca(cm.merged_to_depth(d), subsets_by_depth[d]) for d in depths}
    deep_cm = cm.merged_to_depth(deepest)
    hca_cells = {(g, y): hca(deep_cm, subsets_by_depth[deepest], g, y)
                 for g in sorted(deep_cm.groups)
                 for y in range(cm.n_labels) if deep_cm.n_true(g, y) > 0}
    cont = {g: containment(deep_cm, subsets_by_depth[deepest], g)
            for g in sorted(deep_cm.groups)}
    sem = semantic_accuracy(cm, semantic_groups) if semantic_groups else None
    return MetricsReport(hca=hca_cells, ahca=ahca_by_depth[deepest], pcs=pcs(cm),
                         accuracy=accuracy(cm), containment=cont,
                         semantic_accuracy=sem, ahca_by_depth=ahca_by_depth)


def export_csv(cm: GroupedConfusionMatrix, out_dir: Path | str,
               config_hash: str | None = None) -> list[Path]:
    """One CSV per group plus the aggregate; rows = predicted, columns = true."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    items = [("aggregate", cm.aggregate)]
    items += [("group_" + "_".join(str(p) for p in key), mat)
              for key, mat in sorted(cm.groups.items())]
    for name, mat in items:
        path = out_dir / f"confusion_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if config_hash:
                writer.writerow([f"# config_hash={config_hash}"])
            writer.writerow(["predicted\\true"] + list(range(cm.n_labels)))
            for pred in range(cm.n_labels):
                writer.writerow([pred] + [int(v) for v in mat[pred]])
        written.append(path)
    return written
