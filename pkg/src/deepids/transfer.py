"""Knowledge transfer between domains.

Covers the five-step procedure: build a source domain of single-channel
sliding windows, pre-train the single-channel model on it, initialize a
multi-channel model, copy the hidden-stack weights into every branch, and
fine-tune on the (small) target domain. Also provides the squared
mean-feature-distance diagnostic between two domains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import ATTACK_LABEL, NORMAL_LABEL, Domain, stratified_split_indices
from .errors import (ConfigError, EmptyDomainError, ShapeError, TransferError)
from .network import MAX_KERNEL, MultiChannelNetwork, SequentialNetwork
from .training import TrainConfig, train
from .validation import as_labels, as_tensor

FREEZE_POLICIES = ("frozen", "fine-tune-all", "fine-tune-head-only")


@dataclass
class SegmentationConfig:
    """Sliding-window geometry: window length and stride, both in samples."""

    window: int = 10
    stride: int = 1

    def __post_init__(self):
        if self.window < MAX_KERNEL:
            raise ConfigError(f"window must be >= {MAX_KERNEL}, got {self.window}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    def count(self, total: int) -> int:
        return (total - self.window) // self.stride + 1


@dataclass
class TransferPlan:
    """How hidden layers move and which parameters stay frozen afterwards.

    The layer mapping is positional: hidden layer j of the source stack goes
    to layer j of every branch.
    """

    freeze: str = "fine-tune-all"

    def __post_init__(self):
        if self.freeze not in FREEZE_POLICIES:
            raise ConfigError(f"freeze policy must be one of {FREEZE_POLICIES}, "
                              f"got {self.freeze!r}")


def segment(series, cfg: SegmentationConfig) -> np.ndarray:
    """Cut a 1-d series into overlapping windows; the tail remainder is dropped.

    Returns an array of shape ``[count, window]`` with windows starting at
    0, stride, 2*stride, ...
    """
    series = as_tensor(series, "series", ndim=1)
    if series.shape[0] < cfg.window:
        raise EmptyDomainError(
            f"series of length {series.shape[0]} is shorter than window {cfg.window}")
    count = cfg.count(series.shape[0])
    starts = np.arange(count) * cfg.stride
    return np.stack([series[s:s + cfg.window] for s in starts])


def window_label(labels: np.ndarray) -> int:
    """Majority vote over per-sample labels; ties go to attack."""
    labels = as_labels(labels)
    attack = int((labels == ATTACK_LABEL).sum())
    return ATTACK_LABEL if attack * 2 >= labels.size else NORMAL_LABEL


def build_source_domain(datasets: Sequence[tuple[np.ndarray, np.ndarray]],
                        cfg: SegmentationConfig) -> Domain:
    """Union of single-channel windows from several labeled series.

    Each dataset is ``(values, per_sample_labels)``; every window is labeled
    by majority vote and tagged with the index of its originating series.
    """
    if not datasets:
        raise EmptyDomainError("no source datasets given")
    segments = []
    labels = []
    provenance = []
    for n, (values, sample_labels) in enumerate(datasets):
        values = as_tensor(values, f"dataset {n}", ndim=1)
        sample_labels = as_labels(sample_labels, f"dataset {n} labels")
        if values.shape[0] != sample_labels.shape[0]:
            raise ShapeError(f"dataset {n}: {values.shape[0]} samples but "
                             f"{sample_labels.shape[0]} labels")
        if values.shape[0] < cfg.window:
            continue
        win = segment(values, cfg)
        segments.append(win[:, np.newaxis, :])
        starts = np.arange(win.shape[0]) * cfg.stride
        labels.extend(window_label(sample_labels[s:s + cfg.window]) for s in starts)
        provenance.extend([n] * win.shape[0])
    if not segments:
        raise EmptyDomainError("segmentation produced no source windows")
    return Domain("source", np.concatenate(segments, axis=0), np.array(labels),
                  channels=1, classes=2, provenance=np.array(provenance))


def build_target_domain(channels: Sequence[np.ndarray], sample_labels: np.ndarray,
                        cfg: SegmentationConfig, classes: int = 2) -> Domain:
    """Stack aligned channels into multi-channel windows with majority labels."""
    if not channels:
        raise EmptyDomainError("no target channels given")
    windows = [segment(ch, cfg) for ch in channels]
    x = np.stack(windows, axis=1)  # [S, channels, window]
    sample_labels = as_labels(sample_labels)
    starts = np.arange(x.shape[0]) * cfg.stride
    y = np.array([window_label(sample_labels[s:s + cfg.window]) for s in starts])
    return Domain("target", x, y, channels=len(channels), classes=classes)


def split_domain(domain: Domain, fractions: tuple[float, ...], seed: int) -> tuple[Domain, ...]:
    parts = stratified_split_indices(domain.Y, fractions, seed)
    return tuple(domain.subset(idx) for idx in parts)


def train_source(net: SequentialNetwork, source: Domain, val: Domain,
                 cfg: TrainConfig):
    """Pre-train the single-channel model on the source domain."""
    if source.channels != 1:
        raise ShapeError(f"source domain must be single-channel, has {source.channels}")
    return train(net, source, val, cfg)


def transfer_weights(single: SequentialNetwork, multi: MultiChannelNetwork,
                     plan: TransferPlan) -> MultiChannelNetwork:
    """Copy every hidden-stack parameter of ``single`` into every branch.

    Head and input-normalization parameters of ``multi`` keep their fresh
    initialization. Under the frozen policies the branch normalization
    statistics are pinned as well.
    """
    source_blocks = single.hidden_blocks()
    for k, branch in enumerate(multi.branches, start=1):
        if len(branch) != len(source_blocks):
            raise TransferError(f"branch {k} has {len(branch)} hidden layers, "
                                f"source has {len(source_blocks)}")
        for j, ((src_name, src_block), dst_block) in enumerate(zip(source_blocks, branch), start=1):
            src_items = src_block.sub_items()
            dst_items = dst_block.sub_items()
            if [n for n, _ in src_items] != [n for n, _ in dst_items]:
                raise TransferError(f"branch {k} layer {j}: structure differs from {src_name}")
            for (_, src_layer), (_, dst_layer) in zip(src_items, dst_items):
                for (name, src_arr), (_, dst_arr) in zip(src_layer.state(), dst_layer.state()):
                    if src_arr.shape != dst_arr.shape:
                        raise TransferError(
                            f"branch {k} layer {j} {name}: shape {dst_arr.shape} "
                            f"!= source {src_arr.shape}")
                    dst_arr[...] = src_arr
    if plan.freeze in ("frozen", "fine-tune-head-only"):
        multi.set_branches_frozen(True)
    return multi


def trainable_names(multi: MultiChannelNetwork, plan: TransferPlan) -> list[str] | None:
    if plan.freeze == "fine-tune-all":
        return None
    if plan.freeze == "frozen":
        return []
    branch = set(multi.branch_param_names())
    return [name for name, _ in multi.parameters() if name not in branch]


def fine_tune(multi: MultiChannelNetwork, target: Domain, val: Domain,
              plan: TransferPlan, cfg: TrainConfig):
    """Adapt the multi-channel model to the target domain under the plan's
    freeze policy."""
    if target.channels != multi.n_branches:
        raise ShapeError(f"target has {target.channels} channels but the network "
                         f"has {multi.n_branches} branches")
    return train(multi, target, val, cfg, trainable=trainable_names(multi, plan))


# ---------------------------------------------------------------------------
# domain distance
# ---------------------------------------------------------------------------

def mmd(source: Domain, target: Domain,
        feature_map: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Squared distance between the empirical feature means of two domains.

    With the default identity map, features are the flattened segments; pass
    :func:`gap_feature_map` of a fitted network to compare pooled features
    instead.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyDomainError("mmd needs two non-empty domains")
    fmap = feature_map if feature_map is not None else _flatten_features
    fs = np.atleast_2d(fmap(source.X))
    ft = np.atleast_2d(fmap(target.X))
    if fs.shape[1] != ft.shape[1]:
        raise ShapeError(f"feature dimensions differ: {fs.shape[1]} vs {ft.shape[1]}")
    diff = fs.mean(axis=0) - ft.mean(axis=0)
    return float(diff @ diff)


def _flatten_features(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def gap_feature_map(net) -> Callable[[np.ndarray], np.ndarray]:
    """Feature map drawn from a fitted network's pooled representation."""
    return net.features
