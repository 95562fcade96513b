"""Command-line front end.

    couplab run CONFIG [--profile desk|full] [--out-root DIR] [--data-root DIR]
    couplab build-dataset CONFIG --split train|test --out FILE
    couplab report RUN_DIR [RUN_DIR ...] [--csv FILE]
    couplab tree RUN_DIR            # re-render the decision tree of a run

The data root defaults to the ``COUPLAB_DATA_DIR`` environment variable, then
``./data``. Bundled experiment configs live in ``couplab/configs/``.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .experiment import ConfigError, ExperimentConfig, render_summary, \
    run_experiment, summarize_runs, summary_csv
from .sources import DataNotFoundError, SourceStore


def bundled_config_path(name: str) -> Path:
    path = resources.files("couplab") / "configs" / f"{name}.yaml"
    return Path(str(path))


def _resolve_config(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    bundled = bundled_config_path(arg)
    if bundled.exists():
        return bundled
    raise ConfigError(f"no config file {arg!r} and no bundled config of that name")


def _cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(_resolve_config(args.config),
                                   profile=args.profile, seed=args.seed)
    run_dir = run_experiment(config, out_root=args.out_root,
                             data_root=args.data_root, device=args.device)
    print(f"run complete: {run_dir}")
    return 0


def _cmd_build_dataset(args: argparse.Namespace) -> int:
    from . import coupling as cp
    config = ExperimentConfig.load(_resolve_config(args.config),
                                   profile=args.profile, seed=args.seed)
    tree = config.coupling_tree()
    store = SourceStore(args.data_root)
    builder = cp.build_train if args.split == "train" else cp.build_test
    dataset = builder(tree, config.seed, store)
    dataset.save(args.out)
    print(f"{args.split} set: {len(dataset)} examples, "
          f"hash {dataset.content_hash()[:16]} -> {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rows = summarize_runs(args.run_dirs)
    print(render_summary(rows), end="")
    if args.csv:
        summary_csv(rows, args.csv)
    return 0


def _cmd_tree(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    tree_txt = run_dir / "tree.txt"
    if not tree_txt.exists():
        print(f"{run_dir} has no decision tree (not a coupling run?)", file=sys.stderr)
        return 1
    print(tree_txt.read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="couplab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--data-root", default=None,
                       help="source data directory (default: $COUPLAB_DATA_DIR or ./data)")
        p.add_argument("--profile", choices=["full", "desk"], default="full")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")

    run = sub.add_parser("run", help="end-to-end experiment from a config")
    run.add_argument("config", help="config file path or bundled config name")
    run.add_argument("--out-root", default="runs")
    run.add_argument("--device", default="cpu")
    common(run)
    run.set_defaults(func=_cmd_run)

    build = sub.add_parser("build-dataset", help="build and save a composed dataset")
    build.add_argument("config")
    build.add_argument("--split", choices=["train", "test"], required=True)
    build.add_argument("--out", required=True)
    common(build)
    build.set_defaults(func=_cmd_build_dataset)

    report = sub.add_parser("report", help="summary table over run directories")
    report.add_argument("run_dirs", nargs="*")
    report.add_argument("--csv", default=None)
    report.set_defaults(func=_cmd_report)

    tree = sub.add_parser("tree", help="print a run's decision tree")
    tree.add_argument("run_dir")
    tree.set_defaults(func=_cmd_tree)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataNotFoundError as exc:
        print(f"missing source data: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
