"""Command-line interface: train, evaluate, ablate, and explain.

Settings resolve in three layers: built-in defaults, then a ``key=value``
config file (``--config``), then explicit flags.  Datasets are read from
``DATA_DIR/NAME/NAME_*.txt`` in the usual benchmark layout; artifacts go
to ``--out-dir``.

Exit codes: 0 on success, 2 for configuration, dataset-format, and
missing-file problems, 1 for anything else.  Errors print to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields, replace

from .dataset import make_folds, parse_tu_dataset
from .errors import ConfigError, DatasetFormatError
from .explain import explain_graph, write_dot, write_graph_json
from .persist import (
    load_model,
    save_model,
    write_ablation,
    write_report,
    write_trajectory,
)
from .trainer import (
    VARIANTS,
    TrainConfig,
    cross_validate,
    evaluate_accuracy,
    precompute_tensors,
)

# (subgraph count n, subgraph size s) presets for the common benchmarks;
# small molecules need fewer, larger views than protein graphs.
DATASET_DEFAULTS = {
    "MUTAG": (12, 5),
    "PTC": (12, 5),
    "PTC_MR": (12, 5),
    "PROTEINS": (20, 6),
    "NCI1": (20, 6),
    "NCI109": (20, 6),
    "DD": (30, 8),
}

_PATH_KEYS = ("dataset", "data_dir", "out_dir")


def _field_parsers() -> dict:
    parsers = {}
    for field in fields(TrainConfig):
        if field.name == "dk":
            parsers[field.name] = (
                lambda text: None if text.lower() == "none" else float(text)
            )
        elif isinstance(field.default, int):
            parsers[field.name] = int
        elif isinstance(field.default, float):
            parsers[field.name] = float
        else:
            parsers[field.name] = str
    return parsers


def parse_config_file(path: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    parsers = _field_parsers()
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(
                    f"{path}:{lineno}: expected key=value, got {line!r}"
                )
            key, _, text = line.partition("=")
            key = key.strip().replace("-", "_")
            text = text.strip()
            if key in _PATH_KEYS:
                values[key] = text
            elif key in parsers:
                try:
                    values[key] = parsers[key](text)
                except ValueError as exc:
                    raise ConfigError(
                        f"{path}:{lineno}: bad value for {key}: {text!r}"
                    ) from exc
            else:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


class Settings:
    def __init__(self, dataset: str, data_dir: str, out_dir: str, config: TrainConfig):
        self.dataset = dataset
        self.data_dir = data_dir
        self.out_dir = out_dir
        self.config = config

    @property
    def dataset_dir(self) -> str:
        return os.path.join(self.data_dir, self.dataset)


_FLAG_KEYS = ("seed", "variant", "epochs", "k0", "n", "s", "beta", "jobs")


def resolve_settings(args: argparse.Namespace) -> Settings:
    file_values = parse_config_file(args.config) if args.config else {}
    dataset = args.dataset or file_values.get("dataset")
    if not dataset:
        raise ConfigError("no dataset specified (use --dataset or a config file)")
    data_dir = args.data_dir or file_values.get("data_dir") or "data"
    out_dir = args.out_dir or file_values.get("out_dir") or "out"

    overrides = {k: v for k, v in file_values.items() if k not in _PATH_KEYS}
    for key in _FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    preset = DATASET_DEFAULTS.get(dataset.upper())
    if preset is not None:
        overrides.setdefault("n", preset[0])
        overrides.setdefault("s", preset[1])
    return Settings(dataset, data_dir, out_dir, TrainConfig(**overrides))


def _load_graphs(settings: Settings):
    if not os.path.isdir(settings.dataset_dir):
        raise FileNotFoundError(
            f"dataset directory not found: {settings.dataset_dir}"
        )
    return parse_tu_dataset(settings.dataset_dir, settings.dataset)


def cmd_train(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    graphs = _load_graphs(settings)
    os.makedirs(settings.out_dir, exist_ok=True)
    report, results = cross_validate(graphs, settings.config)
    write_report(
        os.path.join(settings.out_dir, "report.json"),
        report,
        settings.dataset,
        settings.config,
        final_ks=[r.final_k for r in results],
        stopped_epochs=[r.stopped_epoch for r in results],
    )
    write_trajectory(
        os.path.join(settings.out_dir, "trajectory.csv"), report.trajectories
    )
    best = max(results, key=lambda r: (r.test_accuracy, -r.fold))
    save_model(
        settings.out_dir, best.model, settings.config, best.final_k, fold=best.fold
    )
    print(
        f"{settings.dataset}: accuracy {report.mean_accuracy:.4f} "
        f"± {report.std_accuracy:.4f} over {settings.config.fold_count} folds"
    )
    print(
        f"saved fold {best.fold} model (test accuracy {best.test_accuracy:.4f}) "
        f"to {settings.out_dir}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    model, saved_config, final_k = load_model(settings.out_dir)
    graphs = _load_graphs(settings)
    plan = make_folds(graphs, saved_config.seed, saved_config.fold_count)
    if not 0 <= args.fold < plan.fold_count:
        raise ConfigError(
            f"fold {args.fold} out of range 0..{plan.fold_count - 1}"
        )
    _, test_ids = plan.split(args.fold)
    by_id = {g.index: g for g in graphs}
    tensors = {
        i: precompute_tensors(by_id[i], saved_config.n, saved_config.s)
        for i in test_ids
    }
    accuracy = evaluate_accuracy(model, tensors, test_ids, final_k, saved_config)
    print(
        f"{settings.dataset} fold {args.fold}: accuracy {accuracy:.4f} "
        f"({len(test_ids)} graphs, k={final_k:.4f})"
    )
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    graphs = _load_graphs(settings)
    os.makedirs(settings.out_dir, exist_ok=True)
    rows = []
    for variant in VARIANTS:
        config = replace(settings.config, variant=variant)
        if variant == "fixed_k":
            # Hold the pooling ratio at 1.0 so the run isolates what the
            # adaptive agent contributes over keeping every subgraph.
            config = replace(config, k0=1.0)
        report, _ = cross_validate(graphs, config)
        rows.append(
            {
                "variant": variant,
                "mean_accuracy": report.mean_accuracy,
                "std_accuracy": report.std_accuracy,
            }
        )
        write_trajectory(
            os.path.join(settings.out_dir, f"trajectory_{variant}.csv"),
            report.trajectories,
        )
    write_ablation(os.path.join(settings.out_dir, "ablation.csv"), rows)
    lines = [f"{settings.dataset} ablation ({settings.config.fold_count} folds)"]
    for row in rows:
        lines.append(
            f"  {row['variant']:<10} {row['mean_accuracy']:.4f} "
            f"± {row['std_accuracy']:.4f}"
        )
    summary = "\n".join(lines) + "\n"
    with open(
        os.path.join(settings.out_dir, "ablation.txt"), "w", encoding="utf-8"
    ) as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    model, saved_config, final_k = load_model(settings.out_dir)
    graphs = _load_graphs(settings)
    match = next((g for g in graphs if g.index == args.graph_id), None)
    if match is None:
        raise ConfigError(
            f"unknown graph id {args.graph_id} "
            f"(dataset has graphs 0..{len(graphs) - 1})"
        )
    detail = explain_graph(model, saved_config, match, final_k)
    dot_path = os.path.join(settings.out_dir, f"graph_{match.index}.dot")
    json_path = os.path.join(settings.out_dir, f"graph_{match.index}.json")
    write_dot(dot_path, match, detail)
    write_graph_json(json_path, detail)
    print(
        f"graph {match.index}: predicted class {detail['predicted_label']} "
        f"(true {detail['true_label']}), kept {detail['selection_count']} "
        f"of {saved_config.n} subgraphs"
    )
    print(f"wrote {dot_path} and {json_path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="dataset name, e.g. MUTAG")
    parser.add_argument("--data-dir", dest="data_dir", help="dataset root (default: data)")
    parser.add_argument("--out-dir", dest="out_dir", help="artifact directory (default: out)")
    parser.add_argument("--config", help="key=value settings file")
    parser.add_argument("--seed", type=int, help="base random seed")
    parser.add_argument("--variant", choices=VARIANTS, help="training variant")
    parser.add_argument("--epochs", type=int, help="epoch budget per fold")
    parser.add_argument("--k0", type=float, help="initial pooling ratio")
    parser.add_argument("--n", type=int, help="subgraphs sampled per graph")
    parser.add_argument("--s", type=int, help="nodes per subgraph")
    parser.add_argument("--beta", type=float, help="mutual-information loss weight")
    parser.add_argument("--jobs", type=int, help="parallel fold workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subsketch",
        description="Subgraph-based graph classification with adaptive pooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run cross-validated training")
    _add_common(train)
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("evaluate", help="score a saved model on one fold")
    _add_common(evaluate)
    evaluate.add_argument("fold", nargs="?", type=int, default=0, help="fold index")
    evaluate.set_defaults(func=cmd_evaluate)

    ablate = sub.add_parser("ablate", help="compare all training variants")
    _add_common(ablate)
    ablate.set_defaults(func=cmd_ablate)

    explain = sub.add_parser("explain", help="inspect one graph with a saved model")
    _add_common(explain)
    explain.add_argument("graph_id", type=int, help="graph index in the dataset")
    explain.set_defaults(func=cmd_explain)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # keep CLI failures as messages, not tracebacks
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
