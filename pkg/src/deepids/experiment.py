"""End-to-end transfer experiment: pre-train, transfer, fine-tune, and the
paired comparison against training from scratch."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pipeline, transfer
from .domain import Domain
from .errors import ConfigError
from .network import build_multi_channel_dnn, build_single_channel_dnn
from .training import History, TrainConfig, train


def channel_series(table: pipeline.TabularDataset,
                   channels: Sequence[str]) -> list[np.ndarray]:
    """Pull named feature columns as float series (table must be encoded)."""
    return [np.asarray(table.column(name), dtype=np.float64) for name in channels]


def target_domain_from_table(table: pipeline.TabularDataset, channels: Sequence[str],
                             cfg: transfer.SegmentationConfig) -> Domain:
    return transfer.build_target_domain(channel_series(table, channels), table.label, cfg)


@dataclass
class PairedRun:
    seed: int
    transferred_val_acc: float
    scratch_val_acc: float


@dataclass
class TransferResult:
    single_net: object
    transferred_net: object
    source_history: History
    runs: list[PairedRun] = field(default_factory=list)
    mmd_identity: float = 0.0

    @property
    def mean_transferred(self) -> float:
        return float(np.mean([r.transferred_val_acc for r in self.runs]))

    @property
    def mean_scratch(self) -> float:
        return float(np.mean([r.scratch_val_acc for r in self.runs]))


def run_transfer_experiment(source_datasets: Sequence[tuple[np.ndarray, np.ndarray]],
                            target_table: pipeline.TabularDataset,
                            channels: Sequence[str],
                            source_seg: transfer.SegmentationConfig,
                            target_seg: transfer.SegmentationConfig,
                            source_cfg: TrainConfig,
                            finetune_cfg: TrainConfig,
                            plan: transfer.TransferPlan,
                            seeds: Sequence[int]) -> TransferResult:
    """Pre-train once on the source, then run one transferred and one
    from-scratch fine-tune per seed with equal epoch budgets.

    ``source_datasets`` are single-channel labeled series, each carrying its
    own per-sample labels. Both arms of a pair start from the same seed's
    initialization and see the same fixed target split, so the comparison
    isolates the value of the transferred weights.
    """
    if source_seg.window != target_seg.window:
        raise ConfigError("source and target windows must match for transfer")
    source = transfer.build_source_domain(source_datasets, source_seg)
    src_train, src_val = transfer.split_domain(source, (0.8, 0.2), source_cfg.seed)
    single = build_single_channel_dnn(source_seg.window, source.classes, source_cfg.seed)
    _, source_history = transfer.train_source(single, src_train, src_val, source_cfg)

    target = target_domain_from_table(target_table, channels, target_seg)
    tgt_train, tgt_val = transfer.split_domain(target, (0.8, 0.2), finetune_cfg.seed)

    # identity-map domain distance, computed on single-channel windows from
    # both sides so the feature spaces match
    target_decomposed = transfer.build_source_domain(
        [(series, target_table.label) for series in channel_series(target_table, channels)],
        target_seg)
    mmd_identity = transfer.mmd(source, target_decomposed)

    result = TransferResult(single, None, source_history, mmd_identity=mmd_identity)
    for seed in seeds:
        cfg = _with_seed(finetune_cfg, seed)
        transferred = build_multi_channel_dnn(len(channels), target_seg.window,
                                              target.classes, seed)
        transfer.transfer_weights(single, transferred, plan)
        transfer.fine_tune(transferred, tgt_train, tgt_val, plan, cfg)
        t_acc = _accuracy(transferred, tgt_val)

        scratch = build_multi_channel_dnn(len(channels), target_seg.window,
                                          target.classes, seed)
        train(scratch, tgt_train, tgt_val, cfg)
        s_acc = _accuracy(scratch, tgt_val)

        result.runs.append(PairedRun(seed, t_acc, s_acc))
        result.transferred_net = transferred
    return result


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                       optimizer=cfg.optimizer, learning_rate=cfg.learning_rate,
                       rho=cfg.rho, beta1=cfg.beta1, beta2=cfg.beta2,
                       epsilon=cfg.epsilon, patience=cfg.patience,
                       seed=seed, class_weights=cfg.class_weights)


def _accuracy(net, domain: Domain) -> float:
    probs = net.forward(domain.X, train=False)
    return float((probs.argmax(axis=1) == domain.Y).mean())


def write_comparison_csv(result: TransferResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "transferred_val_acc", "scratch_val_acc"])
        for run in result.runs:
            writer.writerow([run.seed, repr(run.transferred_val_acc),
                             repr(run.scratch_val_acc)])
        writer.writerow(["mean", repr(result.mean_transferred), repr(result.mean_scratch)])
