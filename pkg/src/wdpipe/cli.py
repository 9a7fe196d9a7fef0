"""Command-line surface: synth, train, evaluate, predict, profile.

Everything except file paths comes from a JSON config document so runs
are reproducible artifacts.  Exit codes are a stable contract: 0
success, 2 config error, 3 unreadable or unsuitable data, 4 numeric
training failure.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import data as data_mod
from .data import CLASS_NAMES, export_dataset, ingest_directory, synth_generate
from .ensemble import (
    ArchitectureDescriptor,
    Ensemble,
    default_architectures,
    detect,
    load_ensemble,
    save_ensemble,
    train_ensemble,
)
from .errors import (
    ConfigError,
    IngestError,
    ModelFormatError,
    PartitionError,
    PipelineError,
    ShapeError,
    TrainingError,
)
from .metrics import evaluate, format_metrics_table
from .nn.network import TrainConfig
from .partition import default_per_class_min, make_partition
from .pipeline import profile
from .preprocess import preprocess_dataset, train_test_split

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DEFAULTS = {
    "data": {
        "source": "synth",
        "synth": {"n": 200, "mix": [1 / 3, 1 / 3, 1 / 3], "canvas": 32, "seed": 0},
    },
    "preprocess": {"target_size": 32, "split_ratio": 0.75, "split_seed": 0},
    "partition": {"x": 5, "m": None, "rho": 0.10, "seed": 0},
    "train": {"epochs": 10, "batch_size": 32, "learning_rate": 0.05, "seed": 0},
    "ensemble": {"n": 5, "architectures": None},
}


def _require_int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _require_number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _merge_section(defaults: dict, given: dict, path: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    merged = {}
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key in given:
            if isinstance(default, dict) and default and isinstance(given[key], dict):
                merged[key] = _merge_section(default, given[key], here)
            elif isinstance(default, dict) and not isinstance(given[key], dict):
                raise ConfigError(f"{here}: expected an object")
            else:
                merged[key] = given[key]
        else:
            merged[key] = default
    return merged


class RunConfig:
    """Validated run configuration; see ``_DEFAULTS`` for the schema."""

    def __init__(self, document: dict):
        if not isinstance(document, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge_section(_DEFAULTS, document, "")
        self.raw = cfg

        source = cfg["data"]["source"]
        if source not in ("synth", "directory"):
            raise ConfigError(f"data.source: must be 'synth' or 'directory', got {source!r}")
        self.source = source

        synth = cfg["data"]["synth"]
        self.synth_n = _require_int(synth["n"], "data.synth.n", minimum=1)
        mix = synth["mix"]
        if not isinstance(mix, list) or len(mix) != len(CLASS_NAMES):
            raise ConfigError(f"data.synth.mix: expected {len(CLASS_NAMES)} proportions")
        self.synth_mix = [_require_number(v, "data.synth.mix") for v in mix]
        if any(v < 0 for v in self.synth_mix):
            raise ConfigError("data.synth.mix: proportions must be non-negative")
        total = sum(self.synth_mix)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"data.synth.mix: proportions sum to {total}, expected 1")
        self.synth_canvas = _require_int(synth["canvas"], "data.synth.canvas", minimum=16)
        self.synth_seed = _require_int(synth["seed"], "data.synth.seed", minimum=0)

        pp = cfg["preprocess"]
        self.target_size = _require_int(pp["target_size"], "preprocess.target_size", minimum=8)
        self.split_ratio = _require_number(pp["split_ratio"], "preprocess.split_ratio")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(
                f"preprocess.split_ratio: must be in (0, 1), got {self.split_ratio}"
            )
        self.split_seed = _require_int(pp["split_seed"], "preprocess.split_seed", minimum=0)

        part = cfg["partition"]
        self.partition_x = _require_int(part["x"], "partition.x", minimum=1)
        self.partition_m = (
            None if part["m"] is None else _require_int(part["m"], "partition.m", minimum=0)
        )
        self.partition_rho = _require_number(part["rho"], "partition.rho")
        if not 0.0 <= self.partition_rho < 1.0:
            raise ConfigError(f"partition.rho: must be in [0, 1), got {self.partition_rho}")
        self.partition_seed = _require_int(part["seed"], "partition.seed", minimum=0)

        tr = cfg["train"]
        self.epochs = _require_int(tr["epochs"], "train.epochs", minimum=1)
        self.batch_size = _require_int(tr["batch_size"], "train.batch_size", minimum=1)
        self.learning_rate = _require_number(tr["learning_rate"], "train.learning_rate")
        if not self.learning_rate > 0:
            raise ConfigError(f"train.learning_rate: must be > 0, got {self.learning_rate}")
        self.train_seed = _require_int(tr["seed"], "train.seed", minimum=0)

        ens = cfg["ensemble"]
        self.ensemble_n = _require_int(ens["n"], "ensemble.n", minimum=1)
        if self.ensemble_n != self.partition_x:
            raise ConfigError(
                f"ensemble.n ({self.ensemble_n}) must equal partition.x ({self.partition_x})"
            )
        if ens["architectures"] is None:
            self.architectures = None
        else:
            if not isinstance(ens["architectures"], list):
                raise ConfigError("ensemble.architectures: expected a list of descriptors")
            try:
                self.architectures = [
                    ArchitectureDescriptor.from_dict(d) for d in ens["architectures"]
                ]
            except (ShapeError, TypeError, KeyError) as exc:
                raise ConfigError(f"ensemble.architectures: {exc}") from exc
            if len(self.architectures) != self.ensemble_n:
                raise ConfigError(
                    f"ensemble.architectures: {len(self.architectures)} entries "
                    f"for ensemble.n = {self.ensemble_n}"
                )

    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig(document)


def _load_input_dataset(config: RunConfig, data_dir):
    if config.source == "directory":
        if data_dir is None:
            raise ConfigError("data.source is 'directory' but no --data was given")
        return ingest_directory(data_dir)
    return synth_generate(
        config.synth_n, config.synth_mix, canvas=config.synth_canvas, seed=config.synth_seed
    )


def cmd_synth(config: RunConfig, out_dir) -> int:
    dataset = synth_generate(
        config.synth_n, config.synth_mix, canvas=config.synth_canvas, seed=config.synth_seed
    )
    manifest = export_dataset(dataset, out_dir)
    print(json.dumps({"written": len(dataset), "manifest": str(manifest)}))
    return EXIT_OK


def cmd_train(config: RunConfig, data_dir, model_out, log_out=None) -> int:
    dataset = _load_input_dataset(config, data_dir)
    train_raw, test_raw = train_test_split(dataset, config.split_ratio, config.split_seed)
    train_ready = preprocess_dataset(train_raw, config.target_size)
    m = (
        config.partition_m
        if config.partition_m is not None
        else default_per_class_min(train_ready, config.partition_x)
    )
    plan = make_partition(
        train_ready,
        x=config.partition_x,
        m=m,
        rho=config.partition_rho,
        seed=config.partition_seed,
    )
    descriptors = config.architectures or default_architectures(
        config.ensemble_n, num_classes=len(dataset.class_names), input_size=config.target_size
    )
    train_config = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        seed=config.train_seed,
    )
    ensemble = train_ensemble(plan, descriptors, train_ready, train_config)
    save_ensemble(ensemble, model_out)

    log = {
        "config_digest": config.digest(),
        "plan_digest": hashlib.sha256(plan.to_json().encode("utf-8")).hexdigest(),
        "train_size": len(train_raw),
        "test_size": len(test_raw),
        "models": [
            {
                "name": model.descriptor.name,
                "seed": model.seed,
                "block_index": model.train_meta.block_index,
                "final_loss": model.train_meta.final_loss,
            }
            for model in ensemble.models
        ],
    }
    log_text = json.dumps(log, sort_keys=True, indent=2) + "\n"
    log_path = Path(log_out) if log_out else Path(str(model_out) + ".train.json")
    log_path.write_text(log_text, encoding="utf-8", newline="\n")
    print(json.dumps({"model": str(model_out), "log": str(log_path)}))
    return EXIT_OK


def _single_model_ensemble(ensemble: Ensemble, index: int) -> Ensemble:
    return Ensemble(
        models=[ensemble.models[index]],
        class_names=ensemble.class_names,
        input_size=ensemble.input_size,
    )


def cmd_evaluate(model_path, data_dir, table_out=None) -> int:
    ensemble = load_ensemble(model_path)
    dataset = ingest_directory(data_dir)
    named = []
    model_entries = []
    for i in range(ensemble.n):
        column = f"BM{i + 1}"
        report = evaluate(_single_model_ensemble(ensemble, i), dataset)
        named.append((column, report))
        model_entries.append(
            {
                "column": column,
                "name": ensemble.models[i].descriptor.name,
                **report.to_dict(),
            }
        )
    ensemble_report = evaluate(ensemble, dataset)
    named.append(("ensemble", ensemble_report))
    print(
        json.dumps(
            {"ensemble": ensemble_report.to_dict(), "models": model_entries}, sort_keys=True
        )
    )
    if table_out:
        Path(table_out).write_text(
            format_metrics_table(named), encoding="utf-8", newline="\n"
        )
    return EXIT_OK


def cmd_predict(model_path, image_path) -> int:
    ensemble = load_ensemble(model_path)
    image = data_mod.decode_png(Path(image_path))
    result = detect(ensemble, image)
    print(json.dumps(result.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_profile(model_path, data_dir, repetitions, csv_out=None) -> int:
    ensemble = load_ensemble(model_path)
    dataset = ingest_directory(data_dir)
    if len(dataset) == 0:
        raise IngestError(f"{data_dir}: no frames to profile")
    report = profile(ensemble, [s.image for s in dataset], repetitions=repetitions)
    print(report.to_json())
    if csv_out:
        Path(csv_out).write_text(report.to_csv(), encoding="utf-8", newline="\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wdpipe",
        description="Ensemble weapon-detection pipeline: synthesize data, train, "
        "evaluate, predict, and profile.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled PNG directory")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train an ensemble and save the model file")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--data", help="labeled directory (required when data.source=directory)")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--log", help="training log path (default: <out>.train.json)")

    p = sub.add_parser("evaluate", help="evaluate a model on a labeled directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--table", help="also write an aligned text table here")

    p = sub.add_parser("predict", help="run detection on a single PNG image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)

    p = sub.add_parser("profile", help="profile per-stage inference time")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--csv", help="also write the stage table as CSV here")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(load_config(args.config), args.out)
        if args.command == "train":
            return cmd_train(load_config(args.config), args.data, args.out, args.log)
        if args.command == "evaluate":
            return cmd_evaluate(args.model, args.data, args.table)
        if args.command == "predict":
            return cmd_predict(args.model, args.image)
        if args.command == "profile":
            if args.reps < 1:
                raise ConfigError(f"--reps must be >= 1, got {args.reps}")
            return cmd_profile(args.model, args.data, args.reps, args.csv)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestError, ModelFormatError, PartitionError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, PipelineError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
