"""Command-line interface: synth, prepare, train, transfer, evaluate, report.

Every command resolves its parameters from an optional ``--config`` key-value
file overridden by flags, writes a manifest of the resolved values next to
its outputs, and is rerunnable from that manifest alone. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 training diverged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, pipeline, synthgen, transfer
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (CheckpointError, ConfigError, DataError, DeepIDSError,
                     DivergedError, ShapeError, StateError, TransferError)
from .experiment import run_transfer_experiment, write_comparison_csv
from .kvtext import read_kv, write_kv
from .network import build_baseline, build_presnet
from .training import (TrainConfig, evaluate, time_block, train, write_confusion_csv,
                       write_history_csv, write_metrics_report, write_timing)
from .domain import Domain

MODELS = ("presnet", "mlp", "fcn")
FREEZE_FLAGS = {"all": "fine-tune-all", "head": "fine-tune-head-only"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, ShapeError, StateError, TransferError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DeepIDSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepids",
                                     description="deep-transfer-learning IDS toolkit")
    parser.add_argument("--version", action="version", version=f"deepids {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic telemetry CSVs")
    _common(p)
    p.add_argument("--scenario", help="scenario key-value file")
    p.add_argument("--benchmark", help="named benchmark bundle "
                                       "(separable-small | transfer-pair | imbalanced)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="clean, encode, prune, scale, and split a raw CSV")
    _common(p)
    p.add_argument("--raw", help="raw combined CSV (or a directory containing combined.csv)")
    p.add_argument("--schemas", help="directory of sensor schema files")
    p.add_argument("--threshold", type=float, help="|r| pruning threshold (default 0.95)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    _common(p)
    p.add_argument("--prepared", help="directory produced by the prepare command")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=("adam", "adadelta"))
    p.add_argument("--patience", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--target", choices=("label", "type"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="pre-train, transfer, fine-tune, and compare")
    _common(p)
    p.add_argument("--freeze", choices=tuple(FREEZE_FLAGS))
    p.add_argument("--epochs", type=int, help="fine-tune epoch budget")
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=("adam", "adadelta"))
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="score a checkpoint on a prepared test split")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--prepared")
    p.add_argument("--target", choices=("label", "type"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="combine run directories into comparison tables")
    p.add_argument("runs", nargs="*", help="run directories with metrics and history files")
    p.add_argument("--config", help="key-value config file (flags win)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value config file (flags win)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")


def _load_config(args) -> dict[str, str]:
    return read_kv(args.config) if args.config else {}


def _resolve(cfg: dict, args, key: str, cast, default=None, required: bool = False):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if cfg.get(key, "") != "":      # an empty value means "unset" on rerun
        try:
            return cast(cfg[key])
        except ValueError:
            raise ConfigError(f"config key {key!r}: bad value {cfg[key]!r}") from None
    if required:
        raise ConfigError(f"missing required option --{key} (or config key {key!r})")
    return default


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, resolved: dict) -> None:
    manifest = {"command": command, "version": __version__}
    manifest.update({k: str(v) for k, v in resolved.items()})
    manifest["label_convention"] = pipeline.LABEL_CONVENTION
    write_kv(out / "manifest.txt", manifest)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    benchmark = _resolve(cfg, args, "benchmark", str)
    scenario = _resolve(cfg, args, "scenario", str)
    seed = _resolve(cfg, args, "seed", int, 0)
    if benchmark:
        bundle = synthgen.make_benchmark(benchmark, seed)
        for part, data in bundle.parts.items():
            data.write_csvs(out / part if len(bundle.parts) > 1 else out)
        _write_manifest(out, "synth", {"benchmark": benchmark, "seed": seed, "out": out})
        return 0
    if not scenario:
        raise ConfigError("synth needs --scenario or --benchmark")
    length, scenarios, file_seed = synthgen.load_scenario_file(scenario)
    if getattr(args, "seed", None) is None and "seed" not in cfg:
        seed = file_seed
    data = synthgen.generate(synthgen.default_profiles(), length, scenarios, seed)
    data.write_csvs(out)
    _write_manifest(out, "synth", {"scenario": scenario, "seed": seed, "out": out})
    return 0


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    raw = Path(_resolve(cfg, args, "raw", str, required=True))
    seed = _resolve(cfg, args, "seed", int, 0)
    threshold = _resolve(cfg, args, "threshold", float, 0.95)
    if raw.is_dir():
        schemas_dir = Path(_resolve(cfg, args, "schemas", str, str(raw / "schemas")))
        raw_csv = raw / "combined.csv"
    else:
        raw_csv = raw
        schemas_dir = Path(_resolve(cfg, args, "schemas", str, required=True))
    if not schemas_dir.is_dir():
        raise ConfigError(f"schema directory not found: {schemas_dir}")

    schema_paths = sorted(schemas_dir.glob("*.schema"))
    if not schema_paths:
        raise ConfigError(f"no .schema files in {schemas_dir}")
    schemas = [pipeline.load_schema(p) for p in schema_paths]
    combined = [s for s in schemas if s.sensor == "combined"]
    if combined:
        ingest_schema = combined[0]
    elif len(schemas) == 1:
        ingest_schema = schemas[0]
    else:
        raise ConfigError("prepare needs a combined.schema covering the raw CSV "
                          "when several sensor schemas are present")
    dataset = pipeline.ingest([(ingest_schema, raw_csv)])
    prepared = pipeline.prepare(dataset, schemas, seed, threshold)

    pipeline.write_dataset_csv(prepared.train, out / "train.csv")
    pipeline.write_dataset_csv(prepared.val, out / "val.csv")
    pipeline.write_dataset_csv(prepared.test, out / "test.csv")
    pipeline.save_scaler(prepared.scaler, out / "scaler.txt")
    pipeline.write_correlation_csv(prepared.correlation_columns, prepared.correlation,
                                   out / "correlation_matrix.csv")
    pipeline.write_dropped_report(prepared.dropped, out / "dropped_columns.txt")
    write_kv(out / "outliers.txt",
             {name: ",".join(map(str, rows)) for name, rows in prepared.outlier_rows.items()}
             or {"none": "no columns flagged"})
    _write_manifest(out, "prepare", {"raw": raw_csv, "schemas": schemas_dir,
                                     "seed": seed, "threshold": threshold, "out": out})
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_split_tensors(prepared_dir: Path, window: int, target: str):
    geometry = pipeline.InputGeometry("tabular", window)
    domains = []
    classes = 2 if target == "label" else len(pipeline.ATTACK_TYPES)
    for part in ("train", "val", "test"):
        table = pipeline.read_dataset_csv(prepared_dir / f"{part}.csv")
        x, y = pipeline.to_model_input(table, geometry, target)
        domains.append(Domain("target", x, y, x.shape[1], classes))
    return domains


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    prepared = Path(_resolve(cfg, args, "prepared", str, required=True))
    model = _resolve(cfg, args, "model", str, "presnet")
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    epochs = _resolve(cfg, args, "epochs", int, 200)
    batch = _resolve(cfg, args, "batch", int, 64)
    optimizer = _resolve(cfg, args, "optimizer", str, "adam")
    seed = _resolve(cfg, args, "seed", int, 0)
    window = _resolve(cfg, args, "window", int, 10)
    target = _resolve(cfg, args, "target", str, "label")
    patience = _resolve(cfg, args, "patience", int,
                        min(20, epochs) if epochs > 0 else None)

    train_dom, val_dom, test_dom = _load_split_tensors(prepared, window, target)
    channels = train_dom.channels
    if model == "presnet":
        net = build_presnet(channels, window, train_dom.classes, seed)
    else:
        net = build_baseline(model, channels, window, train_dom.classes, seed)

    train_cfg = TrainConfig(epochs=epochs, batch_size=batch, optimizer=optimizer,
                            patience=patience, seed=seed)
    (_, history), train_seconds = time_block(train, net, train_dom, val_dom, train_cfg)
    report = evaluate(net, test_dom, training_time_s=train_seconds)

    save_checkpoint(net, out / "checkpoint.bin")
    write_history_csv(history, out / "history.csv")
    write_metrics_report(report, out / "metrics.txt")
    write_timing(report, history, out / "timing.txt")
    write_confusion_csv(report.confusion, out / "confusion.csv")
    _write_manifest(out, "train", {
        "prepared": prepared, "model": model, "epochs": epochs, "batch": batch,
        "optimizer": optimizer, "seed": seed, "window": window, "target": target,
        "patience": "" if patience is None else patience, "out": out})
    return 0


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------

def cmd_transfer(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    source_dir = Path(_resolve(cfg, args, "source_dir", str, required=True))
    target_dir = Path(_resolve(cfg, args, "target_dir", str, required=True))
    window = _resolve(cfg, args, "window", int, 10)
    stride = _resolve(cfg, args, "stride", int, 1)
    freeze_flag = _resolve(cfg, args, "freeze", str, "all")
    freeze = FREEZE_FLAGS.get(freeze_flag, freeze_flag)
    epochs = _resolve(cfg, args, "epochs", int, 12)
    source_epochs = _resolve(cfg, args, "source_epochs", int, 25)
    batch = _resolve(cfg, args, "batch", int, 32)
    optimizer = _resolve(cfg, args, "optimizer", str, "adam")
    seed = _resolve(cfg, args, "seed", int, 0)
    source_stride = _resolve(cfg, args, "source_stride", int, 40)
    seeds_raw = _resolve(cfg, args, "seeds", str, "1,2,3,4,5")
    seeds = [int(s) for s in str(seeds_raw).split(",") if s.strip()]
    channels_raw = _resolve(cfg, args, "channels", str,
                            ",".join(synthgen.TRANSFER_CHANNELS))
    channels = [c.strip() for c in str(channels_raw).split(",") if c.strip()]

    source_datasets = _per_sensor_channels(source_dir, channels)
    target_table = _encoded_table(target_dir / "combined.csv",
                                  target_dir / "schemas" / "combined.schema")

    plan = transfer.TransferPlan(freeze)
    result = run_transfer_experiment(
        source_datasets, target_table, channels,
        transfer.SegmentationConfig(window, source_stride),
        transfer.SegmentationConfig(window, stride),
        TrainConfig(epochs=source_epochs, batch_size=batch, optimizer=optimizer,
                    patience=None, seed=seed),
        TrainConfig(epochs=epochs, batch_size=batch, optimizer=optimizer,
                    patience=None, seed=seed),
        plan, seeds)
    save_checkpoint(result.single_net, out / "source_checkpoint.bin")
    save_checkpoint(result.transferred_net, out / "transferred_checkpoint.bin")
    write_comparison_csv(result, out / "comparison.csv")
    write_kv(out / "transfer_report.txt", {
        "label_convention": pipeline.LABEL_CONVENTION,
        "mmd_identity": repr(result.mmd_identity),
        "mean_transferred_val_acc": repr(result.mean_transferred),
        "mean_scratch_val_acc": repr(result.mean_scratch),
    })
    _write_manifest(out, "transfer", {
        "source_dir": source_dir, "target_dir": target_dir,
        "window": window, "stride": stride, "source_stride": source_stride,
        "freeze": freeze_flag, "epochs": epochs, "source_epochs": source_epochs,
        "batch": batch, "optimizer": optimizer, "seed": seed,
        "seeds": ",".join(map(str, seeds)), "channels": ",".join(channels),
        "out": out})
    return 0


def _per_sensor_channels(source_dir: Path, channels):
    """Single-channel labeled series, one per requested column, each read
    from the owning sensor's CSV so labels are that sensor's own."""
    schema_dir = source_dir / "schemas"
    if not schema_dir.is_dir():
        raise ConfigError(f"no schemas directory under {source_dir}")
    owner: dict[str, pipeline.SensorSchema] = {}
    for path in sorted(schema_dir.glob("*.schema")):
        schema = pipeline.load_schema(path)
        if schema.sensor == "combined":
            continue
        for feature in schema.features:
            owner[feature.name] = schema
    tables: dict[str, pipeline.TabularDataset] = {}
    datasets = []
    for name in channels:
        if name not in owner:
            raise ConfigError(f"channel {name!r} not declared by any sensor schema "
                              f"in {schema_dir}")
        schema = owner[name]
        if schema.sensor not in tables:
            tables[schema.sensor] = _encoded_table(source_dir / f"{schema.sensor}.csv",
                                                   schema_dir / f"{schema.sensor}.schema")
        table = tables[schema.sensor]
        datasets.append((np.asarray(table.column(name), dtype=np.float64),
                         table.label.copy()))
    return datasets


def _encoded_table(csv_path: Path, schema_path: Path):
    schema = pipeline.load_schema(schema_path)
    raw = pipeline.ingest([(schema, csv_path)])
    encoded = pipeline.encode_labels(raw, [schema])
    if np.isnan(encoded.values).any():
        encoded = pipeline.impute(encoded)
    return encoded


# ---------------------------------------------------------------------------
# evaluate / report
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    checkpoint = Path(_resolve(cfg, args, "checkpoint", str, required=True))
    prepared = Path(_resolve(cfg, args, "prepared", str, required=True))
    target = _resolve(cfg, args, "target", str, "label")

    net = load_checkpoint(checkpoint)
    table = pipeline.read_dataset_csv(prepared / "test.csv")
    x, y = pipeline.to_model_input(table, pipeline.InputGeometry("tabular", net.window),
                                   target)
    classes = 2 if target == "label" else len(pipeline.ATTACK_TYPES)
    report = evaluate(net, Domain("target", x, y, x.shape[1], classes))
    write_metrics_report(report, out / "metrics.txt")
    write_confusion_csv(report.confusion, out / "confusion.csv")
    _write_manifest(out, "evaluate", {"checkpoint": checkpoint, "prepared": prepared,
                                      "target": target, "out": out})
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    runs = list(args.runs) or [r for r in cfg.get("runs", "").split(";") if r]
    if not runs:
        raise ConfigError("report needs run directories (arguments or config key 'runs')")
    metric_rows = []
    efficiency_rows = []
    for run in runs:
        run_dir = Path(run)
        metrics_path = run_dir / "metrics.txt"
        if not metrics_path.is_file():
            raise DataError(f"no metrics.txt in run directory {run_dir}")
        metrics = read_kv(metrics_path)
        manifest = read_kv(run_dir / "manifest.txt") if (run_dir / "manifest.txt").is_file() else {}
        timing = read_kv(run_dir / "timing.txt") if (run_dir / "timing.txt").is_file() else {}
        name = manifest.get("model", run_dir.name)
        metric_rows.append([name, metrics["accuracy"], metrics["precision"],
                            metrics["recall"], metrics["f1score"], metrics["roc_auc"]])
        efficiency_rows.append([name, metrics.get("params", ""),
                                timing.get("training_time_s", ""),
                                timing.get("testing_time_s", "")])
        history_path = run_dir / "history.csv"
        if history_path.is_file():
            (out / f"curves_{name}.csv").write_bytes(history_path.read_bytes())

    _write_csv(out / "metrics_comparison.csv",
               ["Algorithm", "Accuracy", "Precision", "Recall", "F1Score", "ROC AUC"],
               metric_rows)
    _write_csv(out / "efficiency_comparison.csv",
               ["Algorithm", "Params", "Training Time (s)", "Testing Time (s)"],
               efficiency_rows)
    _write_manifest(out, "report", {"runs": ";".join(runs), "out": out})
    return 0


def _write_csv(path: Path, header, rows) -> None:
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
