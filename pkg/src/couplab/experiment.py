"""Config-driven experiment orchestration.

An experiment config is a YAML document:

    name: mnist_cifar
    seed: 0
    dataset:
      kind: coupling               # coupling | half_inverted_mnist | corrupted_cifar10
      levels:                      # coupling only, coarse first
        - {source: mnist, classes: [1, 2]}
        - {source: cifar10, classes: [1, 3, 5, 9]}
      edges:
        - {"1": [1, 3], "2": [5, 9]}
      severity: 3                  # corrupted_cifar10 only
    model: {family: resnet18}      # in_channels / num_classes derived if omitted
    train: {epochs: 150, lr_decay_epochs: [50, 100], ...}
    desk: {model: {...}, train: {epochs: 20, lr_decay_epochs: [10, 15]}}
    metric_depths: [1]
    semantic_groups: {"0": 0, "1": 1, "2": 1, "3": 0}   # optional, label -> group
    dfr: {reweight_per_class: 1000}                     # optional

`--profile desk` deep-merges the `desk` block over `model`/`train`. The hash
of the resolved config is embedded in every artifact the run produces.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import coupling as cp
from . import evaluation as ev
from . import treeview, variants
from .dfr import DfrConfig, evaluate_triplet, render_triplet_table, run_dfr, \
    split_reweight_eval
from .models import ModelFamily, ModelSpec, build_model
from .sources import SOURCE_CHANNELS, Source, SourceStore
from .training import TrainConfig, predict, train
from .variants import LabeledImageSet

DESK_TRAIN_DEFAULTS = {"epochs": 20, "lr_decay_epochs": [10, 15]}


class ConfigError(ValueError):
    pass


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    model: dict
    train: dict
    seed: int
    metric_depths: list[int]
    semantic_groups: dict[int, int] | None
    dfr: dict | None
    profile: str

    @classmethod
    def load(cls, path: Path | str, profile: str = "full",
             seed: int | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        for key in ("name", "dataset"):
            if key not in raw:
                raise ConfigError(f"{path}: missing required key {key!r}")
        if profile not in ("full", "desk"):
            raise ConfigError(f"unknown profile {profile!r}")
        model = raw.get("model", {"family": "resnet18"})
        train_cfg = raw.get("train", {})
        if profile == "desk":
            desk = raw.get("desk", {})
            model = _deep_merge(model, desk.get("model", {}))
            # keep non-schedule knobs from the full recipe; the full-length
            # epoch count and decay points never fit a reduced run
            base_train = {k: v for k, v in train_cfg.items()
                          if k not in ("epochs", "lr_decay_epochs")}
            train_cfg = _deep_merge(_deep_merge(base_train, DESK_TRAIN_DEFAULTS),
                                    desk.get("train", {}))
        semantic = raw.get("semantic_groups")
        if semantic is not None:
            semantic = {int(k): int(v) for k, v in semantic.items()}
        return cls(
            name=str(raw["name"]),
            dataset=raw["dataset"],
            model=model,
            train=train_cfg,
            seed=int(seed if seed is not None else raw.get("seed", 0)),
            metric_depths=[int(d) for d in raw.get("metric_depths", [1])],
            semantic_groups=semantic,
            dfr=raw.get("dfr"),
            profile=profile,
        )

    def resolved(self) -> dict:
        return {
            "name": self.name, "dataset": self.dataset, "model": self.model,
            "train": self.train, "seed": self.seed,
            "metric_depths": self.metric_depths,
            "semantic_groups": self.semantic_groups, "dfr": self.dfr,
            "profile": self.profile,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def coupling_tree(self) -> cp.CouplingTree:
        if self.dataset.get("kind", "coupling") != "coupling":
            raise ConfigError(f"dataset kind {self.dataset.get('kind')} has no coupling tree")
        try:
            return cp.CouplingTree.from_dict(self.dataset)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid coupling tree: {exc}") from exc

    def model_spec(self, in_channels: int, num_classes: int) -> ModelSpec:
        family = {"resnet18": ModelFamily.RESNET18_VARIANT,
                  "mlp10": ModelFamily.MLP10}.get(self.model.get("family", "resnet18"))
        if family is None:
            raise ConfigError(f"unknown model family {self.model.get('family')!r}")
        kwargs = {}
        for key in ("width", "depth"):
            if key in self.model:
                kwargs[key] = int(self.model[key])
        return ModelSpec(family=family,
                         in_channels=int(self.model.get("in_channels", in_channels)),
                         num_classes=int(self.model.get("num_classes", num_classes)),
                         **kwargs)

    def train_config(self) -> TrainConfig:
        cfg = dict(self.train)
        if "lr_decay_epochs" in cfg:
            cfg["lr_decay_epochs"] = tuple(cfg["lr_decay_epochs"])
        return TrainConfig(seed=self.seed, **cfg)


def _write_json(path: Path, payload: dict, config_hash: str) -> None:
    payload = {"config_hash": config_hash, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _heatmaps(cm: ev.GroupedConfusionMatrix, out_dir: Path, config_hash: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    items = [("aggregate", cm.aggregate)]
    items += [("group_" + "_".join(str(p) for p in key), mat)
              for key, mat in sorted(cm.groups.items())]
    for name, mat in items:
        col_sums = mat.sum(axis=0, keepdims=True)
        norm = mat / np.maximum(col_sums, 1)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(norm, cmap="viridis", vmin=0, vmax=1)
        ax.set_xlabel("true")
        ax.set_ylabel("predicted")
        ax.set_title(name)
        fig.tight_layout()
        fig.savefig(out_dir / f"heatmap_{name}.png",
                    metadata={"Description": f"config_hash={config_hash}"})
        plt.close(fig)


def _fine_only_train_set(tree: cp.CouplingTree, store: SourceStore,
                         per_class: int) -> LabeledImageSet:
    """Fine-source images of the selected classes, relabeled 0..n-1."""
    fine = tree.levels[-1]
    pixels, labels = [], []
    for label, path in enumerate(tree.leaf_paths):
        block = store.class_images(fine.source, cp.Split.TRAIN, path[-1])
        take = min(per_class, len(block))
        pixels.append(block[:take])
        labels.append(np.full(take, label, dtype=np.int64))
    return LabeledImageSet(np.concatenate(pixels), np.concatenate(labels),
                           "fine_only_train")


def run_experiment(config: ExperimentConfig, out_root: Path | str,
                   data_root: Path | str | None = None, device: str = "cpu",
                   train_per_class: int = cp.TRAIN_PER_CLASS,
                   test_per_combination: int = cp.TEST_PER_COMBINATION) -> Path:
    """Build data, train, evaluate, and write all artifacts; returns the run dir."""
    store = SourceStore(data_root)
    run_dir = Path(out_root) / f"{config.name}_{config.profile}_seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    (run_dir / "config.json").write_text(
        json.dumps({"config_hash": chash, **config.resolved()}, indent=2, sort_keys=True))

    kind = config.dataset.get("kind", "coupling")
    if kind == "coupling":
        _run_coupling(config, store, run_dir, chash, device,
                      train_per_class, test_per_combination)
    elif kind == "half_inverted_mnist":
        _run_half_inverted(config, store, run_dir, chash, device)
    elif kind == "corrupted_cifar10":
        _run_corrupted_cifar(config, store, run_dir, chash, device)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return run_dir


def _evaluate_and_export(cm: ev.GroupedConfusionMatrix, subsets_by_depth: dict,
                         semantic_groups, run_dir: Path, chash: str) -> ev.MetricsReport:
    report = ev.compute_report(cm, subsets_by_depth, semantic_groups)
    _write_json(run_dir / "metrics.json", report.to_dict(), chash)
    ev.export_csv(cm, run_dir, config_hash=chash)
    _heatmaps(cm, run_dir, chash)
    return report


def _run_coupling(config: ExperimentConfig, store: SourceStore, run_dir: Path,
                  chash: str, device: str, train_per_class: int,
                  test_per_combination: int) -> None:
    tree = config.coupling_tree()
    depth = tree.n_levels - 1
    train_set = cp.build_train(tree, config.seed, store, per_class=train_per_class)
    test_set = cp.build_test(tree, config.seed, store,
                             per_combination=test_per_combination)
    _write_json(run_dir / "dataset_hashes.json",
                {"train": train_set.content_hash(), "test": test_set.content_hash(),
                 "tree": tree.content_hash()}, chash)

    spec = config.model_spec(in_channels=tree.channels, num_classes=tree.n_labels)
    model = build_model(spec, seed=config.seed)
    train(model, train_set, config.train_config(), run_dir=run_dir, device=device)

    preds = predict(model, test_set, device=device)
    records = [(test_set.group_key(i, depth), int(test_set.labels[i]), int(preds[i]))
               for i in range(len(test_set))]
    cm = ev.confusion(records, tree.n_labels)
    depths = sorted(set(config.metric_depths) | {depth})
    subsets_by_depth = {d: tree.subsets(d) for d in depths}
    _evaluate_and_export(cm, subsets_by_depth, config.semantic_groups, run_dir, chash)

    dt = treeview.infer_tree(cm, tree)
    (run_dir / "tree.txt").write_text(f"# config_hash={chash}\n" + treeview.render_text(dt))
    (run_dir / "tree.dot").write_text(f"// config_hash={chash}\n" + treeview.render_dot(dt))

    if config.dfr is not None:
        _run_dfr_stage(config, tree, store, run_dir, chash, model, test_set,
                       device, train_per_class)


def _run_dfr_stage(config: ExperimentConfig, tree: cp.CouplingTree,
                   store: SourceStore, run_dir: Path, chash: str, model,
                   test_set: cp.ComposedDataset, device: str,
                   train_per_class: int) -> None:
    dfr_cfg = DfrConfig(seed=config.seed, **(config.dfr or {}))
    labels = np.asarray(test_set.labels)
    reweight_idx, eval_idx = split_reweight_eval(labels, dfr_cfg.reweight_per_class,
                                                 dfr_cfg.seed)
    retrained = run_dfr(model, test_set, dfr_cfg, reweight_idx=reweight_idx,
                        device=device)

    fine_source = tree.levels[-1].source
    fine_channels = SOURCE_CHANNELS[fine_source]
    baseline_spec = ModelSpec(family=config.model_spec(1, 2).family,
                              in_channels=fine_channels,
                              num_classes=tree.n_labels,
                              width=config.model_spec(1, 2).width,
                              depth=config.model_spec(1, 2).depth)
    baseline = build_model(baseline_spec, seed=config.seed + 1)
    baseline_set = _fine_only_train_set(tree, store, train_per_class)
    train(baseline, baseline_set, config.train_config(), device=device)

    if config.semantic_groups is None:
        raise ConfigError("dfr stage needs semantic_groups in the config")
    fine_slice = slice(tree.channels - fine_channels, tree.channels)
    report = evaluate_triplet(model, retrained, baseline, test_set, eval_idx,
                              config.semantic_groups, fine_channels=fine_slice,
                              device=device)
    _write_json(run_dir / "dfr_report.json", report, chash)
    (run_dir / "dfr_report.txt").write_text(
        f"# config_hash={chash}\n" + render_triplet_table(report))


def _run_half_inverted(config: ExperimentConfig, store: SourceStore,
                       run_dir: Path, chash: str, device: str) -> None:
    train_set = variants.build_half_inverted_mnist("train", store)
    _write_json(run_dir / "dataset_hashes.json",
                {"train": train_set.content_hash()}, chash)
    spec = config.model_spec(in_channels=1, num_classes=10)
    model = build_model(spec, seed=config.seed)
    train(model, train_set, config.train_config(), run_dir=run_dir, device=device)

    records = []
    for split, group in (("test_original", ("black_background",)),
                         ("test_inverted", ("white_background",))):
        test = variants.build_half_inverted_mnist(split, store)
        preds = predict(model, test, device=device)
        records += [(group, int(t), int(p)) for t, p in zip(test.labels, preds)]
    cm = ev.confusion(records, 10)
    _evaluate_and_export(cm, {1: variants.HALF_INVERTED_SUBSETS}, None, run_dir, chash)


def _run_corrupted_cifar(config: ExperimentConfig, store: SourceStore,
                         run_dir: Path, chash: str, device: str) -> None:
    severity = int(config.dataset.get("severity", variants.DEFAULT_SEVERITY))
    specs = variants.default_corruption_specs(severity)
    train_set, test_set, groups = variants.build_corrupted_cifar(
        specs, config.seed, store)
    _write_json(run_dir / "dataset_hashes.json",
                {"train": train_set.content_hash(), "test": test_set.content_hash()},
                chash)
    spec = config.model_spec(in_channels=3, num_classes=10)
    model = build_model(spec, seed=config.seed)
    train(model, train_set, config.train_config(), run_dir=run_dir, device=device)

    preds = predict(model, test_set, device=device)
    records = [((groups[i],), int(test_set.labels[i]), int(preds[i]))
               for i in range(len(test_set))]
    cm = ev.confusion(records, 10)
    _evaluate_and_export(cm, {1: variants.corruption_subsets(specs)}, None,
                         run_dir, chash)


def summarize_runs(run_dirs: list[Path | str]) -> list[dict]:
    """One summary row per run directory, read back from its metrics JSON."""
    rows = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        metrics_path = run_dir / "metrics.json"
        if not metrics_path.exists():
            raise FileNotFoundError(f"{metrics_path} missing")
        try:
            metrics = json.loads(metrics_path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{metrics_path} is corrupt: {exc}") from exc
        rows.append({
            "name": run_dir.name,
            "ahca": metrics["ahca"],
            "pcs": metrics["pcs"],
            "accuracy": metrics.get("accuracy"),
            "semantic_accuracy": metrics.get("semantic_accuracy"),
        })
    return rows


def render_summary(rows: list[dict]) -> str:
    lines = [f"{'name':<40}{'AHCA':>8}{'PCS':>8}{'SemAcc':>8}"]
    for row in rows:
        sem = row.get("semantic_accuracy")
        sem_text = f"{100 * sem:>8.2f}" if sem is not None else f"{'-':>8}"
        lines.append(f"{row['name']:<40}{100 * row['ahca']:>8.2f}"
                     f"{100 * row['pcs']:>8.2f}{sem_text}")
    return "\n".join(lines) + "\n"


def summary_csv(rows: list[dict], path: Path | str) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["name", "ahca", "pcs", "accuracy",
                                                "semantic_accuracy"])
        writer.writeheader()
        writer.writerows(rows)
