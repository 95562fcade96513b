"""Executable reference for the idealized hierarchical decision process.

Two predictors over class-conditional score vectors: the two-stage rule that
first restricts candidates to the subset coupled with the coarse features and
then takes the within-subset argmax, and the flat argmax used when the simple
features alone carry the labels. Ties always break to the lowest label index.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .coupling import CouplingTree, GroupKey


def _check_scores(scores: Sequence[float], n_labels: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (n_labels,):
        raise ValueError(f"expected {n_labels} scores, got shape {scores.shape}")
    if not np.isfinite(scores).any():
        raise ValueError("scores have no finite entry")
    return scores


def predict_scenario_a(tree: CouplingTree, coarse: GroupKey,
                       scores: Sequence[float]) -> int:
    """Argmax of `scores` restricted to the labels coupled with `coarse`."""
    subsets = tree.subsets(depth=len(coarse))
    if tuple(coarse) not in subsets:
        raise KeyError(f"{coarse} is not a coarse path of the tree")
    members = sorted(subsets[tuple(coarse)])
    scores = _check_scores(scores, tree.n_labels)
    return members[int(np.argmax(scores[members]))]


def predict_scenario_b(scores: Sequence[float], n_labels: int | None = None) -> int:
    """Unrestricted argmax with lowest-index tie-break."""
    scores = np.asarray(scores, dtype=np.float64)
    if n_labels is not None:
        scores = _check_scores(scores, n_labels)
    elif scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty vector")
    return int(np.argmax(scores))
