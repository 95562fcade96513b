import json

import pytest
import yaml

from couplab.experiment import (ConfigError, ExperimentConfig, render_summary,
                                run_experiment, summarize_runs, summary_csv)

TINY_COUPLING = {
    "name": "tiny",
    "seed": 0,
    "dataset": {
        "kind": "coupling",
        "levels": [{"source": "mnist", "classes": [1, 2]},
                   {"source": "cifar10", "classes": [1, 3, 5, 9]}],
        "edges": [{"1": [1, 3], "2": [5, 9]}],
    },
    "model": {"family": "mlp10", "width": 16, "depth": 2},
    "train": {"epochs": 2, "batch_size": 32, "lr0": 0.05, "lr_decay_epochs": [1]},
    "desk": {"train": {"epochs": 1, "lr_decay_epochs": []}},
    "metric_depths": [1],
    "semantic_groups": {"0": 0, "1": 1, "2": 1, "3": 0},
    "dfr": {"reweight_per_class": 8},
}

TINY_HALF_INVERTED = {
    "name": "tiny_hi",
    "dataset": {"kind": "half_inverted_mnist"},
    "model": {"family": "mlp10", "width": 16, "depth": 2},
    "train": {"epochs": 1, "batch_size": 64, "lr0": 0.05, "lr_decay_epochs": []},
}


def write_config(tmp_path, payload, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload))
    return path


class TestConfigLoading:
    def test_full_profile_keeps_train_block(self, tmp_path):
        config = ExperimentConfig.load(write_config(tmp_path, TINY_COUPLING))
        assert config.train["epochs"] == 2
        assert config.train_config().lr_decay_epochs == (1,)
        assert config.semantic_groups == {0: 0, 1: 1, 2: 1, 3: 0}

    def test_desk_profile_overrides_schedule(self, tmp_path):
        config = ExperimentConfig.load(write_config(tmp_path, TINY_COUPLING),
                                       profile="desk")
        assert config.train["epochs"] == 1
        assert config.train["lr_decay_epochs"] == []
        assert config.train["batch_size"] == 32  # non-schedule knob survives

    def test_desk_defaults_when_no_desk_block(self, tmp_path):
        payload = dict(TINY_COUPLING)
        payload.pop("desk")
        config = ExperimentConfig.load(write_config(tmp_path, payload),
                                       profile="desk")
        assert config.train["epochs"] == 20
        assert config.train["lr_decay_epochs"] == [10, 15]

    def test_seed_override(self, tmp_path):
        config = ExperimentConfig.load(write_config(tmp_path, TINY_COUPLING), seed=7)
        assert config.seed == 7
        assert config.train_config().seed == 7

    def test_hash_stable_and_sensitive(self, tmp_path):
        path = write_config(tmp_path, TINY_COUPLING)
        a = ExperimentConfig.load(path).config_hash()
        b = ExperimentConfig.load(path).config_hash()
        c = ExperimentConfig.load(path, seed=1).config_hash()
        d = ExperimentConfig.load(path, profile="desk").config_hash()
        assert a == b
        assert len({a, c, d}) == 3

    def test_missing_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="name"):
            ExperimentConfig.load(write_config(tmp_path, {"dataset": {}}))

    def test_bad_yaml_rejected(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("a: [1, 2\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)

    def test_unknown_profile(self, tmp_path):
        with pytest.raises(ConfigError, match="profile"):
            ExperimentConfig.load(write_config(tmp_path, TINY_COUPLING),
                                  profile="prod")

    def test_unknown_model_family(self, tmp_path):
        payload = dict(TINY_COUPLING, model={"family": "vit"})
        config = ExperimentConfig.load(write_config(tmp_path, payload))
        with pytest.raises(ConfigError, match="family"):
            config.model_spec(3, 4)


@pytest.fixture(scope="module")
def coupling_run(tmp_path_factory, synthetic_root):
    tmp = tmp_path_factory.mktemp("coupling_run")
    config = ExperimentConfig.load(write_config(tmp, TINY_COUPLING))
    run_dir = run_experiment(config, out_root=tmp / "runs",
                             data_root=synthetic_root,
                             train_per_class=24, test_per_combination=12)
    return config, run_dir


class TestRunExperiment:
    def test_artifacts_present(self, coupling_run):
        _, run_dir = coupling_run
        for name in ("config.json", "dataset_hashes.json", "metrics.json",
                     "train_log.csv", "tree.txt", "tree.dot",
                     "dfr_report.json", "dfr_report.txt",
                     "confusion_aggregate.csv", "heatmap_aggregate.png"):
            assert (run_dir / name).exists(), name

    def test_run_dir_name(self, coupling_run):
        config, run_dir = coupling_run
        assert run_dir.name == "tiny_full_seed0"

    def test_config_hash_embedded_everywhere(self, coupling_run):
        config, run_dir = coupling_run
        chash = config.config_hash()
        for name in ("config.json", "metrics.json", "dataset_hashes.json",
                     "dfr_report.json"):
            assert json.loads((run_dir / name).read_text())["config_hash"] == chash
        assert chash in (run_dir / "tree.txt").read_text()
        assert chash in (run_dir / "tree.dot").read_text()
        with open(run_dir / "confusion_aggregate.csv") as fh:
            assert chash in fh.readline()

    def test_metrics_shape(self, coupling_run):
        _, run_dir = coupling_run
        metrics = json.loads((run_dir / "metrics.json").read_text())
        assert set(metrics) >= {"ahca", "pcs", "accuracy", "containment",
                                "semantic_accuracy", "hca"}
        assert -1.0 <= metrics["ahca"] <= 1.0
        assert 0.0 <= metrics["pcs"] <= 1.0

    def test_dfr_report_shape(self, coupling_run):
        _, run_dir = coupling_run
        report = json.loads((run_dir / "dfr_report.json").read_text())
        assert set(report) == {"config_hash", "spurious", "dfr", "baseline"}

    def test_deterministic_rerun(self, coupling_run, synthetic_root, tmp_path):
        config, run_dir = coupling_run
        rerun_dir = run_experiment(config, out_root=tmp_path,
                                   data_root=synthetic_root,
                                   train_per_class=24, test_per_combination=12)
        for name in ("dataset_hashes.json", "metrics.json"):
            assert (rerun_dir / name).read_text() == (run_dir / name).read_text()

    def test_half_inverted_run(self, synthetic_root, tmp_path):
        config = ExperimentConfig.load(write_config(tmp_path, TINY_HALF_INVERTED))
        run_dir = run_experiment(config, out_root=tmp_path / "runs",
                                 data_root=synthetic_root)
        metrics = json.loads((run_dir / "metrics.json").read_text())
        groups = {cell["group"][0] for cell in metrics["hca"]}
        assert groups == {"black_background", "white_background"}
        assert metrics["semantic_accuracy"] is None

    def test_unknown_dataset_kind(self, synthetic_root, tmp_path):
        payload = dict(TINY_HALF_INVERTED, dataset={"kind": "imagenet"})
        config = ExperimentConfig.load(write_config(tmp_path, payload))
        with pytest.raises(ConfigError, match="kind"):
            run_experiment(config, out_root=tmp_path / "runs",
                           data_root=synthetic_root)


class TestSummaries:
    def test_summarize_and_render(self, coupling_run):
        _, run_dir = coupling_run
        rows = summarize_runs([run_dir])
        assert rows[0]["name"] == run_dir.name
        text = render_summary(rows)
        assert run_dir.name in text and "AHCA" in text

    def test_summary_csv(self, coupling_run, tmp_path):
        _, run_dir = coupling_run
        out = tmp_path / "summary.csv"
        summary_csv(summarize_runs([run_dir]), out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("name,ahca,pcs")
        assert len(lines) == 2

    def test_missing_run_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            summarize_runs([tmp_path / "nope"])
