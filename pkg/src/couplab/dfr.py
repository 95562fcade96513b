"""Last-layer retraining on target-distribution data and the 3-model comparison.

`run_dfr` freezes everything except the final affine layer of a trained
classifier, extracts penultimate features on a class-balanced reweighting
split drawn from an unconstrained (test-style) build, fits an L2-regularized
multinomial logistic regression on those features, and installs the fitted
weights as the new final layer. The regularization strength is selected on a
held-out half of the reweighting split.

`evaluate_triplet` scores the spurious model, its retrained copy, and a
baseline trained on fine-source images only, reporting standard accuracy and
semantic accuracy on a shared evaluation split disjoint from the reweighting
split.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from collections.abc import Mapping

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from .models import extract_features
from .training import predict


@dataclass
class DfrConfig:
    reweight_per_class: int = 1000
    regularization_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0)
    class_balancing: bool = True
    seed: int = 0


def backbone_hash(model: torch.nn.Module) -> str:
    """Hash of all parameters except the final affine layer."""
    h = hashlib.sha256()
    for name, param in sorted(model.state_dict().items()):
        if name.startswith("fc."):
            continue
        h.update(name.encode())
        h.update(param.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def split_reweight_eval(labels: np.ndarray, per_class: int,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (reweight, evaluation) index sets, reweight class-balanced."""
    rng = np.random.default_rng(seed)
    reweight = []
    for y in np.unique(labels):
        members = np.flatnonzero(labels == y)
        if len(members) <= per_class:
            raise ValueError(
                f"label {y} has {len(members)} samples; need > {per_class} to "
                "keep an evaluation remainder")
        reweight.append(rng.choice(members, size=per_class, replace=False))
    reweight = np.sort(np.concatenate(reweight))
    mask = np.ones(len(labels), dtype=bool)
    mask[reweight] = False
    return reweight, np.flatnonzero(mask)


def _features(model: torch.nn.Module, pixels: np.ndarray,
              batch_size: int = 512, device="cpu") -> np.ndarray:
    device = torch.device(device)
    model.to(device).eval()
    chunks = []
    for start in range(0, len(pixels), batch_size):
        x = torch.from_numpy(pixels[start:start + batch_size]).to(device).float() / 255.0
        chunks.append(extract_features(model, x).cpu().numpy())
    return np.concatenate(chunks)


def fit_last_layer(features: np.ndarray, labels: np.ndarray,
                   config: DfrConfig) -> LogisticRegression:
    """Multinomial logistic head; C selected on a held-out half."""
    rng = np.random.default_rng(config.seed + 1)
    order = rng.permutation(len(labels))
    half = len(order) // 2
    fit_idx, val_idx = order[:half], order[half:]

    def make(c: float) -> LogisticRegression:
        return LogisticRegression(penalty="l2", C=c, max_iter=2000, tol=1e-6)

    best_c, best_score = None, -np.inf
    for c in config.regularization_grid:
        clf = make(c).fit(features[fit_idx], labels[fit_idx])
        score = clf.score(features[val_idx], labels[val_idx])
        if score > best_score:
            best_c, best_score = c, score
    return make(best_c).fit(features, labels)


def run_dfr(model: torch.nn.Module, target_data, config: DfrConfig,
            reweight_idx: np.ndarray | None = None,
            device="cpu") -> torch.nn.Module:
    """Return a copy of `model` with its final layer refit on target features.

    `target_data` must be a test-style (uncoupled) build. When `reweight_idx`
    is omitted a class-balanced subset is drawn per the config; pass explicit
    indices to control disjointness with an evaluation split.
    """
    labels = np.asarray(target_data.labels)
    if reweight_idx is None:
        reweight_idx, _ = split_reweight_eval(labels, config.reweight_per_class,
                                              config.seed)
    num_classes = model.fc.out_features
    counts = np.bincount(labels[reweight_idx], minlength=num_classes)
    if (counts < num_classes).any():
        raise ValueError(f"reweight split too small per class: {counts.tolist()}")

    features = _features(model, target_data.pixels[reweight_idx], device=device)
    clf = fit_last_layer(features, labels[reweight_idx], config)

    retrained = copy.deepcopy(model)
    with torch.no_grad():
        weight = np.zeros((num_classes, features.shape[1]), dtype=np.float32)
        bias = np.zeros(num_classes, dtype=np.float32)
        weight[clf.classes_] = clf.coef_
        bias[clf.classes_] = clf.intercept_
        retrained.fc.weight.copy_(torch.from_numpy(weight))
        retrained.fc.bias.copy_(torch.from_numpy(bias))
    retrained.eval()
    return retrained


def evaluate_triplet(spurious: torch.nn.Module, dfr_model: torch.nn.Module,
                     baseline: torch.nn.Module, eval_set, eval_idx: np.ndarray,
                     semantic_groups: Mapping[int, int],
                     fine_channels: slice | None = None,
                     device="cpu") -> dict:
    """Standard and semantic accuracy for the three models on one eval split.

    `fine_channels` selects the channels the baseline consumes (it is trained
    on fine-source images only); the other two models see all channels.
    """
    labels = np.asarray(eval_set.labels)[eval_idx]
    subset = _IndexedView(eval_set, eval_idx)
    groups = np.array([semantic_groups[y] for y in range(int(labels.max()) + 1)])
    report = {}
    for name, model, chans in (("spurious", spurious, None),
                               ("dfr", dfr_model, None),
                               ("baseline", baseline, fine_channels)):
        preds = predict(model, subset, device=device, channels=chans)
        report[name] = {
            "standard_accuracy": float(np.mean(preds == labels)),
            "semantic_accuracy": float(np.mean(groups[preds] == groups[labels])),
        }
    return report


class _IndexedView:
    """Row-subset view over anything with .pixels and .labels."""

    def __init__(self, dataset, idx: np.ndarray):
        self.pixels = dataset.pixels[idx]
        self.labels = np.asarray(dataset.labels)[idx]

    def __len__(self):
        return len(self.labels)


def render_triplet_table(report: dict) -> str:
    lines = [f"{'Model':<10}{'Standard':>10}{'Semantic':>10}"]
    for name, label in (("spurious", "Spurious"), ("dfr", "DFR"), ("baseline", "Baseline")):
        row = report[name]
        lines.append(f"{label:<10}{100 * row['standard_accuracy']:>10.2f}"
                     f"{100 * row['semantic_accuracy']:>10.2f}")
    return "\n".join(lines) + "\n"
