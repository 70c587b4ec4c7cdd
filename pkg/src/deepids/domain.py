"""Labeled segment collections and deterministic stratified splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDomainError, ShapeError, StratificationError
from .validation import as_labels, as_tensor

NORMAL_LABEL = 1
ATTACK_LABEL = 0
LABEL_CONVENTION = "normal=1,attack=0"


@dataclass
class Domain:
    """A labeled dataset of fixed-length segments.

    ``X`` has shape ``[S, channels, L]``; ``Y`` holds int labels below
    ``classes``; ``provenance`` tags each segment with the index of the
    series it was cut from.
    """

    role: str                 # "source" | "target"
    X: np.ndarray
    Y: np.ndarray
    channels: int
    classes: int
    provenance: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise ShapeError(f"domain role must be 'source' or 'target', got {self.role!r}")
        self.X = as_tensor(self.X, "X", ndim=3)
        self.Y = as_labels(self.Y, "Y")
        if self.X.shape[0] == 0:
            raise EmptyDomainError(f"{self.role} domain has no segments")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} segments but {self.Y.shape[0]} labels")
        if self.X.shape[1] != self.channels:
            raise ShapeError(f"segments have {self.X.shape[1]} channels, declared {self.channels}")
        if self.Y.size and (self.Y.min() < 0 or self.Y.max() >= self.classes):
            raise ShapeError(f"labels must lie in [0, {self.classes})")
        if self.provenance is None:
            self.provenance = np.zeros(self.X.shape[0], dtype=np.int64)
        else:
            self.provenance = as_labels(self.provenance, "provenance")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def segment_length(self) -> int:
        return self.X.shape[2]

    def subset(self, indices) -> "Domain":
        idx = np.asarray(indices, dtype=np.int64)
        return Domain(self.role, self.X[idx], self.Y[idx], self.channels, self.classes,
                      self.provenance[idx])


def stratified_split_indices(labels: np.ndarray, fractions: tuple[float, ...],
                             seed: int) -> tuple[np.ndarray, ...]:
    """Split row indices into ``len(fractions)`` disjoint, exhaustive groups.

    Rows of each class are shuffled deterministically and allocated to groups
    by largest-remainder rounding of ``count * fraction``, with at least one
    row of every class in every group. Raises if any class has fewer rows
    than there are groups.
    """
    labels = as_labels(labels)
    n_groups = len(fractions)
    if not np.isclose(sum(fractions), 1.0):
        raise StratificationError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    groups: list[list[np.ndarray]] = [[] for _ in range(n_groups)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < n_groups:
            raise StratificationError(
                f"class {cls} has {idx.size} rows, needs at least {n_groups}")
        rng.shuffle(idx)
        counts = _largest_remainder(idx.size, fractions)
        start = 0
        for g, count in enumerate(counts):
            groups[g].append(idx[start:start + count])
            start += count
    return tuple(np.sort(np.concatenate(parts)) for parts in groups)


def _largest_remainder(total: int, fractions: tuple[float, ...]) -> list[int]:
    targets = [total * f for f in fractions]
    counts = [int(np.floor(t)) for t in targets]
    remainders = [t - c for t, c in zip(targets, counts)]
    for g in sorted(range(len(fractions)), key=lambda g: (-remainders[g], g))[: total - sum(counts)]:
        counts[g] += 1
    # every group must see every class at least once
    for g in range(len(fractions)):
        while counts[g] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[g] += 1
    return counts
