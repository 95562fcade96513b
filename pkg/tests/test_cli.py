import json

import pytest
import yaml

from couplab.cli import bundled_config_path, main
from couplab.coupling import ComposedDataset

TINY_HALF_INVERTED = {
    "name": "cli_hi",
    "dataset": {"kind": "half_inverted_mnist"},
    "model": {"family": "mlp10", "width": 16, "depth": 2},
    "train": {"epochs": 1, "batch_size": 64, "lr0": 0.05, "lr_decay_epochs": []},
}

TINY_COUPLING = {
    "name": "cli_coupling",
    "dataset": {
        "kind": "coupling",
        "levels": [{"source": "mnist", "classes": [1, 2]},
                   {"source": "patch", "classes": [0, 1, 2, 3]}],
        "edges": [{"1": [0, 1], "2": [2, 3]}],
    },
    "model": {"family": "mlp10", "width": 16, "depth": 2},
    "train": {"epochs": 1, "batch_size": 64, "lr0": 0.05, "lr_decay_epochs": []},
}


def write_config(tmp_path, payload):
    path = tmp_path / f"{payload['name']}.yaml"
    path.write_text(yaml.safe_dump(payload))
    return path


class TestBundledConfigs:
    @pytest.mark.parametrize("name", ["mnist_cifar", "cifar_mnist", "patch_mnist",
                                      "mnist_patch", "patch_mnist_cifar",
                                      "half_inverted_mnist", "corrupted_cifar10"])
    def test_present_and_loadable(self, name):
        path = bundled_config_path(name)
        assert path.exists()
        raw = yaml.safe_load(path.read_text())
        assert raw["name"] == name


class TestRunCommand:
    def test_end_to_end(self, tmp_path, synthetic_root, capsys):
        config = write_config(tmp_path, TINY_HALF_INVERTED)
        code = main(["run", str(config), "--out-root", str(tmp_path / "runs"),
                     "--data-root", str(synthetic_root)])
        assert code == 0
        out = capsys.readouterr().out
        run_dir = tmp_path / "runs" / "cli_hi_full_seed0"
        assert str(run_dir) in out
        assert (run_dir / "metrics.json").exists()

    def test_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["run", "no_such_config"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_data_exits_3(self, tmp_path, capsys):
        config = write_config(tmp_path, TINY_HALF_INVERTED)
        code = main(["run", str(config), "--out-root", str(tmp_path / "runs"),
                     "--data-root", str(tmp_path / "empty")])
        assert code == 3
        assert "missing source data" in capsys.readouterr().err


class TestBuildDatasetCommand:
    def test_build_test_split(self, tmp_path, synthetic_root, capsys):
        config = write_config(tmp_path, TINY_COUPLING)
        out = tmp_path / "test.npz"
        code = main(["build-dataset", str(config), "--split", "test",
                     "--out", str(out), "--data-root", str(synthetic_root)])
        assert code == 0
        ds = ComposedDataset.load(out)
        assert ds.content_hash()[:16] in capsys.readouterr().out
        assert len(ds) == 2 * 4 * 1000


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, synthetic_root):
    tmp = tmp_path_factory.mktemp("cli_run")
    config = write_config(tmp, TINY_HALF_INVERTED)
    main(["run", str(config), "--out-root", str(tmp / "runs"),
          "--data-root", str(synthetic_root)])
    return tmp / "runs" / "cli_hi_full_seed0"


class TestReportAndTree:
    def test_report_table(self, run_dir, capsys):
        assert main(["report", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "AHCA" in out and run_dir.name in out

    def test_report_csv(self, run_dir, tmp_path, capsys):
        out = tmp_path / "summary.csv"
        assert main(["report", str(run_dir), "--csv", str(out)]) == 0
        assert out.read_text().startswith("name,")

    def test_report_no_runs_prints_header(self, capsys):
        assert main(["report"]) == 0
        assert "AHCA" in capsys.readouterr().out

    def test_tree_on_non_coupling_run(self, run_dir, capsys):
        assert main(["tree", str(run_dir)]) == 1
        assert "no decision tree" in capsys.readouterr().err

    def test_tree_prints_coupling_tree(self, tmp_path, synthetic_root, capsys):
        config = write_config(tmp_path, TINY_COUPLING)
        # tiny patch coupling run exercises the coupling path end to end
        import couplab.experiment as ex
        cfg = ex.ExperimentConfig.load(config)
        run = ex.run_experiment(cfg, out_root=tmp_path / "runs",
                                data_root=synthetic_root,
                                train_per_class=16, test_per_combination=8)
        capsys.readouterr()
        assert main(["tree", str(run)]) == 0
        assert "within-subset" in capsys.readouterr().out
