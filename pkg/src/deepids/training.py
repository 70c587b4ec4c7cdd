"""Mini-batch training loop, optimizers, early stopping, and evaluation."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ops
from .domain import LABEL_CONVENTION, Domain
from .errors import ConfigError, DivergedError, EvaluationError
from .kvtext import write_kv
from .network import count_params

OPTIMIZER_DEFAULT_LR = {"adam": 1e-3, "adadelta": 1.0}


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float | None = None   # per-optimizer default when None
    rho: float = 0.95                    # adadelta decay
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float | None = None         # 1e-8 adam, 1e-6 adadelta
    patience: int | None = 20            # None disables early stopping
    monitor: str = "val_loss"
    seed: int = 0
    class_weights: Sequence[float] | None = None

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZER_DEFAULT_LR:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.patience is not None and self.patience > self.epochs:
            raise ConfigError(f"patience {self.patience} exceeds epoch limit {self.epochs}")
        if self.monitor != "val_loss":
            raise ConfigError(f"only 'val_loss' can be monitored, got {self.monitor!r}")

    def resolved_lr(self) -> float:
        return OPTIMIZER_DEFAULT_LR[self.optimizer] if self.learning_rate is None else self.learning_rate


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def best_val_loss(self) -> float:
        return min(r.val_loss for r in self.epochs)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    confusion: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    param_count: int
    training_time_s: float = 0.0
    testing_time_s: float = 0.0


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class Adam:
    """First/second-moment update with bias correction."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon
        self.t = 0
        self._state: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, named_params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in named_params:
            if name not in self._state:
                self._state[name] = (np.zeros_like(p.value), np.zeros_like(p.value))
            m, v = self._state[name]
            m[...] = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v[...] = self.beta2 * v + (1.0 - self.beta2) * p.grad ** 2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class AdaDelta:
    """Running-average update with per-parameter step-size adaptation."""

    def __init__(self, learning_rate: float = 1.0, rho: float = 0.95,
                 epsilon: float = 1e-6):
        self.lr = learning_rate
        self.rho = rho
        self.eps = epsilon
        self._state: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, named_params) -> None:
        for name, p in named_params:
            if name not in self._state:
                self._state[name] = (np.zeros_like(p.value), np.zeros_like(p.value))
            acc_grad, acc_update = self._state[name]
            acc_grad[...] = self.rho * acc_grad + (1.0 - self.rho) * p.grad ** 2
            update = np.sqrt(acc_update + self.eps) / np.sqrt(acc_grad + self.eps) * p.grad
            acc_update[...] = self.rho * acc_update + (1.0 - self.rho) * update ** 2
            p.value -= self.lr * update


def make_optimizer(cfg: TrainConfig):
    lr = cfg.resolved_lr()
    if cfg.optimizer == "adam":
        return Adam(lr, cfg.beta1, cfg.beta2, 1e-8 if cfg.epsilon is None else cfg.epsilon)
    return AdaDelta(lr, cfg.rho, 1e-6 if cfg.epsilon is None else cfg.epsilon)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train(net, train_domain: Domain, val_domain: Domain, cfg: TrainConfig,
          trainable: Sequence[str] | None = None):
    """Train ``net`` in place; returns ``(net, History)``.

    Shuffling is seeded per run, validation loss is monitored every epoch,
    and the parameters from the best validation epoch are restored at the
    end. ``trainable`` optionally restricts updates to the named parameters
    (gradients still flow through the frozen ones).
    """
    cfg.validate()
    optimizer = make_optimizer(cfg)
    all_params = net.parameters()
    if trainable is None:
        step_params = all_params
    else:
        wanted = set(trainable)
        step_params = [(n, p) for n, p in all_params if n in wanted]
    rng = np.random.default_rng(cfg.seed)
    n = len(train_domain)
    history = History()
    best_snapshot = None
    best_val = np.inf
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            net.zero_grad()
            logits = net.logits(train_domain.X[idx], train=True)
            loss, probs, grad = ops.softmax_cross_entropy_batch(
                logits, train_domain.Y[idx], cfg.class_weights)
            if not np.isfinite(loss):
                raise DivergedError(f"training loss became {loss} at epoch {epoch}")
            net.backward(grad)
            optimizer.step(step_params)
            loss_sum += loss * idx.size
            correct += int((probs.argmax(axis=1) == train_domain.Y[idx]).sum())
        val_loss, val_acc = _loss_and_accuracy(net, val_domain, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise DivergedError(f"validation loss became {val_loss} at epoch {epoch}")
        history.epochs.append(EpochRecord(epoch, loss_sum / n, correct / n,
                                          val_loss, val_acc, time.perf_counter() - t0))
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = net.snapshot()
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break

    if best_snapshot is not None:
        net.restore(best_snapshot)
    return net, history


def _loss_and_accuracy(net, domain: Domain, batch_size: int) -> tuple[float, float]:
    loss_sum = 0.0
    correct = 0
    n = len(domain)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        logits = net.logits(domain.X[sl], train=False)
        loss, probs, _ = ops.softmax_cross_entropy_batch(logits, domain.Y[sl])
        loss_sum += loss * probs.shape[0]
        correct += int((probs.argmax(axis=1) == domain.Y[sl]).sum())
    return loss_sum / n, correct / n


def predict_proba(net, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    parts = [net.forward(X[start:start + batch_size], train=False)
             for start in range(0, X.shape[0], batch_size)]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def confusion_matrix(y_true, y_pred, classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray):
    """Accuracy plus per-class precision/recall/f1 (zero where undefined)."""
    total = cm.sum()
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    accuracy = float(diag.sum() / total) if total else 0.0
    return accuracy, precision, recall, f1


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative,
    counting ties as one half. Computed from average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(labels).astype(bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC AUC undefined: need both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc_macro(probs: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest macro average over the classes present on both sides."""
    labels = np.asarray(labels, dtype=np.int64)
    aucs = []
    for cls in range(probs.shape[1]):
        mask = labels == cls
        if 0 < mask.sum() < labels.size:
            aucs.append(roc_auc(probs[:, cls], mask))
    if not aucs:
        raise EvaluationError("ROC AUC undefined: labels contain a single class")
    return float(np.mean(aucs))


def evaluate(net, domain: Domain, training_time_s: float = 0.0,
             batch_size: int = 256) -> MetricsReport:
    """Score a trained network; timing covers the forward pass only."""
    if len(domain) == 0:
        raise EvaluationError("cannot evaluate on an empty test set")
    t0 = time.perf_counter()
    probs = predict_proba(net, domain.X, batch_size)
    testing_time = time.perf_counter() - t0
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(domain.Y, preds, domain.classes)
    accuracy, precision, recall, f1 = metrics_from_confusion(cm)
    return MetricsReport(
        accuracy=accuracy,
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        roc_auc=roc_auc_macro(probs, domain.Y),
        confusion=cm,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        param_count=count_params(net),
        training_time_s=training_time_s,
        testing_time_s=testing_time,
    )


def time_block(fn: Callable, *args, **kwargs):
    """Run ``fn`` and return ``(result, wall_seconds)``."""
    t0 = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

HISTORY_COLUMNS = ["epoch", "train_acc", "val_acc", "train_loss", "val_loss"]


def write_history_csv(history: History, path: str | Path) -> None:
    """Epoch curves without wall-clock columns, so reruns are byte-identical."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for r in history.epochs:
            writer.writerow([r.epoch, repr(r.train_acc), repr(r.val_acc),
                             repr(r.train_loss), repr(r.val_loss)])


def read_history_csv(path: str | Path) -> History:
    history = History()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            history.epochs.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]),
                                              float(row["train_acc"]), float(row["val_loss"]),
                                              float(row["val_acc"]), 0.0))
    return history


def write_metrics_report(report: MetricsReport, path: str | Path) -> None:
    write_kv(path, {
        "label_convention": LABEL_CONVENTION,
        "accuracy": repr(report.accuracy),
        "precision": repr(report.precision),
        "recall": repr(report.recall),
        "f1score": repr(report.f1),
        "roc_auc": repr(report.roc_auc),
        "params": str(report.param_count),
    })


def write_timing(report: MetricsReport, history: History, path: str | Path) -> None:
    """Wall-clock figures live apart from the deterministic artifacts."""
    write_kv(path, {
        "training_time_s": repr(report.training_time_s),
        "testing_time_s": repr(report.testing_time_s),
        "epochs_completed": str(len(history)),
        "mean_epoch_seconds": repr(float(np.mean([r.seconds for r in history.epochs]))
                                   if history.epochs else 0.0),
    })


def write_confusion_csv(cm: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [f"class{j}" for j in range(cm.shape[1])])
        for i in range(cm.shape[0]):
            writer.writerow([f"class{i}"] + [int(v) for v in cm[i]])
