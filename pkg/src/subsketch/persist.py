"""File formats for trained models, run reports, and trajectories.

A model is stored as two files: ``model.bin``, the registry arrays
concatenated flat as little-endian float64, and ``model.manifest.json``
naming each array, its shape, and the training configuration plus the final
pooling ratio.  The split keeps the dump trivially readable from any
language.  Reports deliberately exclude wall-clock time so repeated runs
with one seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict

import numpy as np

from .encoder import EncoderParams
from .errors import ConfigError
from .sketch_mi import SketchParams
from .trainer import ModelParams, RunReport, TrainConfig

SCHEMA_VERSION = 1


def save_model(
    out_dir: str,
    model: ModelParams,
    config: TrainConfig,
    final_k: float,
    fold: int | None = None,
) -> None:
    registry = model.registry()
    flat = np.concatenate([arr.reshape(-1) for arr in registry.values()])
    with open(os.path.join(out_dir, "model.bin"), "wb") as fh:
        fh.write(flat.astype("<f8").tobytes())
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "final_k": final_k,
        "fold": fold,
        "config": asdict(config),
        "arrays": [
            {"name": name, "shape": list(arr.shape)} for name, arr in registry.items()
        ],
    }
    _write_json(os.path.join(out_dir, "model.manifest.json"), manifest)


def load_model(out_dir: str) -> tuple[ModelParams, TrainConfig, float]:
    manifest_path = os.path.join(out_dir, "model.manifest.json")
    bin_path = os.path.join(out_dir, "model.bin")
    for path in (manifest_path, bin_path):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing model file: {path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported model schema {manifest.get('schema_version')!r}"
        )
    flat = np.frombuffer(open(bin_path, "rb").read(), dtype="<f8").astype(np.float64)
    arrays = {}
    cursor = 0
    for item in manifest["arrays"]:
        size = int(np.prod(item["shape"]))
        arrays[item["name"]] = flat[cursor : cursor + size].reshape(item["shape"]).copy()
        cursor += size
    if cursor != flat.size:
        raise ConfigError(
            f"model.bin holds {flat.size} values but the manifest describes {cursor}"
        )

    config = TrainConfig(**manifest["config"])
    layer_names = sorted(
        (name for name in arrays if name.startswith("encoder.layer")),
        key=lambda name: int(name.removeprefix("encoder.layer")),
    )
    heads = sum(1 for name in arrays if name.startswith("sketch.w_inter"))
    model = ModelParams(
        encoder=EncoderParams(
            layer_weights=tuple(arrays[name] for name in layer_names),
            w_intra=arrays["encoder.w_intra"],
            a_intra=arrays["encoder.a_intra"],
        ),
        projection=arrays["pool.p"],
        sketch=SketchParams(
            w_inter=tuple(arrays[f"sketch.w_inter{m}"] for m in range(heads)),
            a_inter=tuple(arrays[f"sketch.a_inter{m}"] for m in range(heads)),
            w_mi=arrays["sketch.w_mi"],
        ),
        classifier_w=arrays["classifier.w"],
        classifier_b=arrays["classifier.b"],
    )
    return model, config, float(manifest["final_k"])


def write_report(
    path: str, report: RunReport, dataset: str, config: TrainConfig,
    final_ks: list[float], stopped_epochs: list[int],
) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "dataset": dataset,
        "config": asdict(config),
        "fold_accuracies": report.fold_accuracies,
        "mean_accuracy": report.mean_accuracy,
        "std_accuracy": report.std_accuracy,
        "final_ks": final_ks,
        "stopped_epochs": stopped_epochs,
    }
    _write_json(path, payload)


TRAJECTORY_FIELDS = ("fold", "epoch", "loss", "train_acc", "k", "reward", "terminated")


def write_trajectory(path: str, trajectories: list[list[dict]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_FIELDS)
        writer.writeheader()
        for rows in trajectories:
            for row in rows:
                out = dict(row)
                out["loss"] = f"{row['loss']:.10g}"
                out["train_acc"] = f"{row['train_acc']:.10g}"
                out["k"] = f"{row['k']:.10g}"
                out["reward"] = (
                    "" if row["reward"] is None else f"{row['reward']:.10g}"
                )
                out["terminated"] = int(row["terminated"])
                writer.writerow(out)


def read_trajectory(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "fold": int(row["fold"]),
                    "epoch": int(row["epoch"]),
                    "loss": float(row["loss"]),
                    "train_acc": float(row["train_acc"]),
                    "k": float(row["k"]),
                    "reward": None if row["reward"] == "" else float(row["reward"]),
                    "terminated": bool(int(row["terminated"])),
                }
            )
        return rows


def write_ablation(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=("variant", "mean_accuracy", "std_accuracy")
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "variant": row["variant"],
                    "mean_accuracy": f"{row['mean_accuracy']:.10g}",
                    "std_accuracy": f"{row['std_accuracy']:.10g}",
                }
            )


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
