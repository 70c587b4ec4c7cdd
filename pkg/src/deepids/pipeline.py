"""Telemetry ingestion and preparation.

CSV files from the seven sensor feeds are concatenated under a harmonized
column union, categorical values are encoded against declared vocabularies,
missing cells are median-imputed, redundant columns are pruned by pairwise
correlation, features are min-max scaled onto [0, 1] with statistics fitted
on the training split only, and rows are split 64/16/20 stratified by label.

Label convention: normal = 1, attack = 0 (surfaced in every report header).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import t as t_dist

from . import transfer
from .domain import (ATTACK_LABEL, LABEL_CONVENTION, NORMAL_LABEL,
                     stratified_split_indices)
from .errors import (ConfigError, ConstantFeatureError, CorrelationError, DataError,
                     EncodeError, EsdInapplicableWarning, ImputeError, IngestError,
                     SchemaError, ShapeError, StratificationError)
from .kvtext import read_kv, write_kv

LABEL_COLUMN = "label"
TYPE_COLUMN = "type"
NORMAL_TYPE = "normal"
NO_ATTACK = -1
ATTACK_TYPES = ("dos", "ddos", "injection", "mitm", "backdoor",
                "password", "scanning", "xss", "ransomware")
TIME_COLUMNS = frozenset({"date", "time", "timestamp", "ts"})
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str                       # "numeric" | "categorical"
    vocabulary: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.vocabulary:
            raise SchemaError(f"feature {self.name!r}: categorical needs a vocabulary")


@dataclass(frozen=True)
class SensorSchema:
    sensor: str
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(names) != len(set(names)):
            raise SchemaError(f"schema {self.sensor!r}: duplicate feature names")

    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def by_name(self) -> dict[str, FeatureSpec]:
        return {f.name: f for f in self.features}


def load_schema(path: str | Path) -> SensorSchema:
    kv = read_kv(path)
    if "sensor" not in kv:
        raise SchemaError(f"{path}: missing 'sensor' key")
    features = []
    i = 1
    while f"feature.{i}.name" in kv:
        name = kv[f"feature.{i}.name"]
        kind = kv.get(f"feature.{i}.kind", "numeric")
        vocab = tuple(v.strip() for v in kv.get(f"feature.{i}.values", "").split(",") if v.strip())
        features.append(FeatureSpec(name, kind, vocab))
        i += 1
    if not features:
        raise SchemaError(f"{path}: schema declares no features")
    return SensorSchema(kv["sensor"], tuple(features))


def save_schema(schema: SensorSchema, path: str | Path) -> None:
    kv = {"sensor": schema.sensor}
    for i, f in enumerate(schema.features, start=1):
        kv[f"feature.{i}.name"] = f.name
        kv[f"feature.{i}.kind"] = f.kind
        if f.kind == "categorical":
            kv[f"feature.{i}.values"] = ",".join(f.vocabulary)
    write_kv(path, kv)


@dataclass
class TabularDataset:
    """Column-named matrix with a binary label and optional attack-type codes.

    ``values`` is an object array straight after ingest (strings still raw)
    and float64 (NaN marks missing) after :func:`encode_labels`.
    """

    columns: list[str]
    values: np.ndarray
    label: np.ndarray
    attack_type: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def subset(self, rows) -> "TabularDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return TabularDataset(list(self.columns), self.values[rows], self.label[rows],
                              None if self.attack_type is None else self.attack_type[rows])

    def select_columns(self, names: Sequence[str]) -> "TabularDataset":
        idx = [self.column_index(n) for n in names]
        return TabularDataset(list(names), self.values[:, idx], self.label.copy(),
                              None if self.attack_type is None else self.attack_type.copy())


# ---------------------------------------------------------------------------
# ingestion and encoding
# ---------------------------------------------------------------------------

def ingest(sources: Sequence[tuple[SensorSchema, str | Path]]) -> TabularDataset:
    """Read and stack sensor CSVs under the union of their schema columns.

    Columns a file does not provide are marked missing; date/time/timestamp
    columns are dropped. Labels are required; an attack-type column is
    optional.
    """
    union, spec_of = _schema_union([schema for schema, _ in sources])
    col_of = {name: i for i, name in enumerate(union)}
    rows: list[list] = []
    labels: list[int] = []
    types: list[int] = []
    saw_type = False

    for schema, path in sources:
        path = Path(path)
        if not path.is_file():
            raise IngestError(f"input file not found: {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IngestError(f"{path}: empty file") from None
            own = schema.by_name()
            for col in header:
                if col in own or col == LABEL_COLUMN or col == TYPE_COLUMN \
                        or col.lower() in TIME_COLUMNS:
                    continue
                raise SchemaError(f"{path}: column {col!r} not declared in schema "
                                  f"{schema.sensor!r}")
            for feature in schema.features:
                if feature.name not in header:
                    raise SchemaError(f"{path}: schema column {feature.name!r} "
                                      f"missing from header")
            if LABEL_COLUMN not in header:
                raise SchemaError(f"{path}: missing required {LABEL_COLUMN!r} column")
            positions = {col: i for i, col in enumerate(header)}
            has_type = TYPE_COLUMN in positions
            saw_type = saw_type or has_type

            for row_no, cells in enumerate(reader, start=2):
                if len(cells) != len(header):
                    raise IngestError(f"{path}:{row_no}: expected {len(header)} cells, "
                                      f"got {len(cells)}")
                out: list = [None] * len(union)
                for feature in schema.features:
                    raw = cells[positions[feature.name]].strip()
                    if raw.lower() in MISSING_TOKENS:
                        continue
                    if feature.kind == "numeric":
                        try:
                            out[col_of[feature.name]] = float(raw)
                        except ValueError:
                            raise IngestError(
                                f"{path}:{row_no}: column {feature.name!r}: "
                                f"cannot parse {raw!r} as a number") from None
                    else:
                        out[col_of[feature.name]] = raw
                labels.append(_parse_label(cells[positions[LABEL_COLUMN]], path, row_no))
                types.append(_parse_type(cells[positions[TYPE_COLUMN]], path, row_no)
                             if has_type else NO_ATTACK)
                rows.append(out)

    if not rows:
        raise IngestError("ingest produced no rows")
    values = np.empty((len(rows), len(union)), dtype=object)
    values[...] = rows
    return TabularDataset(union, values, np.array(labels, dtype=np.int64),
                          np.array(types, dtype=np.int64) if saw_type else None)


def _schema_union(schemas: Sequence[SensorSchema]):
    union: list[str] = []
    spec_of: dict[str, FeatureSpec] = {}
    for schema in schemas:
        for feature in schema.features:
            if feature.name in spec_of:
                if spec_of[feature.name] != feature:
                    raise SchemaError(f"feature {feature.name!r} declared twice with "
                                      f"different kinds or vocabularies")
                continue
            spec_of[feature.name] = feature
            union.append(feature.name)
    return union, spec_of


def _parse_label(raw: str, path, row_no: int) -> int:
    raw = raw.strip()
    if raw not in ("0", "1"):
        raise IngestError(f"{path}:{row_no}: label must be 0 or 1, got {raw!r}")
    return int(raw)


def _parse_type(raw: str, path, row_no: int) -> int:
    raw = raw.strip()
    if raw == NORMAL_TYPE or raw.lower() in MISSING_TOKENS:
        return NO_ATTACK
    if raw not in ATTACK_TYPES:
        raise IngestError(f"{path}:{row_no}: unknown attack type {raw!r}")
    return ATTACK_TYPES.index(raw)


def encode_labels(dataset: TabularDataset,
                  schemas: Sequence[SensorSchema]) -> TabularDataset:
    """Replace categorical strings with their declared vocabulary codes."""
    _, spec_of = _schema_union(schemas)
    encoded = np.full(dataset.values.shape, np.nan, dtype=np.float64)
    for j, name in enumerate(dataset.columns):
        spec = spec_of.get(name)
        if spec is None:
            raise SchemaError(f"column {name!r} not covered by any schema")
        col = dataset.values[:, j]
        if spec.kind == "numeric":
            for i, cell in enumerate(col):
                if cell is not None:
                    encoded[i, j] = float(cell)
        else:
            codes = {v: float(k) for k, v in enumerate(spec.vocabulary)}
            for i, cell in enumerate(col):
                if cell is None:
                    continue
                if cell not in codes:
                    raise EncodeError(f"column {name!r}: value {cell!r} not in "
                                      f"vocabulary {list(spec.vocabulary)}")
                encoded[i, j] = codes[cell]
    return TabularDataset(list(dataset.columns), encoded, dataset.label.copy(),
                          None if dataset.attack_type is None else dataset.attack_type.copy())


# ---------------------------------------------------------------------------
# cleaning
# ---------------------------------------------------------------------------

def detect_outliers_esd(column, alpha: float = 0.05, max_outliers: int = 5) -> list[int]:
    """Generalized extreme studentized deviate (many-outlier) test.

    Iteratively removes the most extreme point and compares its studentized
    deviation against the t-based critical value; flagged set is the largest
    prefix whose statistic exceeds its critical value. Samples smaller than
    15 are passed through unflagged with a warning.
    """
    if max_outliers < 1:
        raise ConfigError(f"max_outliers must be >= 1, got {max_outliers}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    col = np.asarray(column, dtype=np.float64)
    if col.ndim != 1:
        raise ShapeError(f"expected a 1-d column, got shape {col.shape}")
    n = col.size
    if n < 15:
        warnings.warn(f"sample of size {n} too small for the outlier test; "
                      f"column passed through unflagged", EsdInapplicableWarning)
        return []

    remaining = list(range(n))
    removed: list[int] = []
    exceeds: list[bool] = []
    for i in range(1, min(max_outliers, n - 2) + 1):
        sub = col[remaining]
        mean = sub.mean()
        sd = sub.std(ddof=1)
        if sd == 0.0:
            break
        dev = np.abs(sub - mean)
        j = int(np.argmax(dev))
        r_i = dev[j] / sd
        p = 1.0 - alpha / (2.0 * (n - i + 1))
        tv = t_dist.ppf(p, n - i - 1)
        lam = (n - i) * tv / np.sqrt((n - i - 1 + tv ** 2) * (n - i + 1))
        removed.append(remaining.pop(j))
        exceeds.append(bool(r_i > lam))
    flagged = 0
    for i, hit in enumerate(exceeds, start=1):
        if hit:
            flagged = i
    return removed[:flagged]


def compute_medians(dataset: TabularDataset) -> np.ndarray:
    """Per-column median over observed values; a fully missing column raises."""
    medians = np.empty(len(dataset.columns))
    for j, name in enumerate(dataset.columns):
        col = dataset.values[:, j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            raise ImputeError(f"column {name!r} has no observed values")
        medians[j] = np.median(observed)
    return medians


def impute(dataset: TabularDataset, medians: np.ndarray | None = None) -> TabularDataset:
    """Fill missing cells with column medians (training-split medians when
    preparing evaluation rows)."""
    if medians is None:
        medians = compute_medians(dataset)
    values = dataset.values.copy()
    mask = np.isnan(values)
    values[mask] = np.broadcast_to(medians, values.shape)[mask]
    return TabularDataset(list(dataset.columns), values, dataset.label.copy(),
                          None if dataset.attack_type is None else dataset.attack_type.copy())


# ---------------------------------------------------------------------------
# correlation and pruning
# ---------------------------------------------------------------------------

def pearson(x, y) -> float:
    """Product-moment correlation from centered sums."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"columns must be 1-d and equal length, got {x.shape}, {y.shape}")
    if x.size < 2:
        raise CorrelationError("need at least 2 rows")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc ** 2).sum()) * np.sqrt((yc ** 2).sum())
    if denom == 0.0:
        raise CorrelationError("correlation undefined for a constant column")
    return float((xc * yc).sum() / denom)


def correlation_matrix(dataset: TabularDataset) -> np.ndarray:
    """Full pairwise matrix; entries touching a constant column are NaN."""
    x = dataset.values
    xc = x - x.mean(axis=0)
    sums = (xc ** 2).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc.T @ xc) / np.sqrt(np.outer(sums, sums))
    r[:, sums == 0] = np.nan
    r[sums == 0, :] = np.nan
    return r


@dataclass(frozen=True)
class DroppedColumn:
    name: str
    reason: str                  # "constant" | "correlated"
    partner: str | None = None
    r: float | None = None


def prune_redundant(dataset: TabularDataset, threshold: float = 0.95,
                    correlation_csv: str | Path | None = None):
    """Drop constant columns and, for every too-correlated pair, the later
    column in schema order. Returns ``(pruned, report)``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must lie in (0, 1], got {threshold}")
    corr = correlation_matrix(dataset)
    if correlation_csv is not None:
        write_correlation_csv(dataset.columns, corr, correlation_csv)
    kept: list[int] = []
    report: list[DroppedColumn] = []
    sums = ((dataset.values - dataset.values.mean(axis=0)) ** 2).sum(axis=0)
    for j, name in enumerate(dataset.columns):
        if sums[j] == 0.0:
            report.append(DroppedColumn(name, "constant"))
            continue
        partner = None
        for i in kept:
            if abs(corr[i, j]) > threshold:
                partner = i
                break
        if partner is None:
            kept.append(j)
        else:
            report.append(DroppedColumn(name, "correlated",
                                        dataset.columns[partner], float(corr[partner, j])))
    pruned = dataset.select_columns([dataset.columns[j] for j in kept])
    return pruned, report


def write_correlation_csv(columns: Sequence[str], corr: np.ndarray,
                          path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature"] + list(columns))
        for i, name in enumerate(columns):
            writer.writerow([name] + [repr(float(v)) for v in corr[i]])


def write_dropped_report(report: Sequence[DroppedColumn], path: str | Path) -> None:
    lines = [f"# label_convention = {LABEL_CONVENTION}"]
    for item in report:
        if item.reason == "constant":
            lines.append(f"{item.name} = constant")
        else:
            lines.append(f"{item.name} = correlated with {item.partner} (r={item.r!r})")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

@dataclass
class Scaler:
    """Per-feature min/max fitted on the training split only."""

    columns: list[str]
    mins: np.ndarray
    maxs: np.ndarray


def fit_scaler(train: TabularDataset) -> Scaler:
    values = train.values
    if np.isnan(values).any():
        raise DataError("cannot fit scaler: dataset still has missing values")
    mins = values.min(axis=0)
    maxs = values.max(axis=0)
    for j, name in enumerate(train.columns):
        if maxs[j] == mins[j]:
            raise ConstantFeatureError(f"feature {name!r} is constant on the training "
                                       f"split; prune it before scaling")
    return Scaler(list(train.columns), mins, maxs)


def normalize(dataset: TabularDataset, scaler: Scaler) -> TabularDataset:
    """Min-max scale onto [0, 1]; rows outside the fitted range clamp."""
    if list(dataset.columns) != scaler.columns:
        raise SchemaError("dataset columns do not match the fitted scaler")
    scaled = (dataset.values - scaler.mins) / (scaler.maxs - scaler.mins)
    np.clip(scaled, 0.0, 1.0, out=scaled)
    return TabularDataset(list(dataset.columns), scaled, dataset.label.copy(),
                          None if dataset.attack_type is None else dataset.attack_type.copy())


def save_scaler(scaler: Scaler, path: str | Path) -> None:
    write_kv(path, {name: f"{float(scaler.mins[j])!r} {float(scaler.maxs[j])!r}"
                    for j, name in enumerate(scaler.columns)})


def load_scaler(path: str | Path) -> Scaler:
    kv = read_kv(path)
    columns = list(kv)
    mins = np.empty(len(columns))
    maxs = np.empty(len(columns))
    for j, name in enumerate(columns):
        lo, _, hi = kv[name].partition(" ")
        mins[j] = float(lo)
        maxs[j] = float(hi)
    return Scaler(columns, mins, maxs)


# ---------------------------------------------------------------------------
# splitting and model input
# ---------------------------------------------------------------------------

SPLIT_FRACTIONS = (0.64, 0.16, 0.20)


def split(dataset: TabularDataset, seed: int,
          fractions: tuple[float, float, float] = SPLIT_FRACTIONS):
    """Stratified train/val/test rows (64/16/20 of the total by default)."""
    if dataset.n_rows < 10:
        raise StratificationError(f"need at least 10 rows to split, got {dataset.n_rows}")
    train_idx, val_idx, test_idx = stratified_split_indices(dataset.label, fractions, seed)
    return dataset.subset(train_idx), dataset.subset(val_idx), dataset.subset(test_idx)


@dataclass
class InputGeometry:
    """How a table becomes a [N, channels, window] tensor.

    ``tabular`` repeats each feature value across the window so rows become
    constant channels; ``windowed`` treats rows as a time-ordered series and
    cuts sliding windows per channel.
    """

    mode: str = "tabular"
    window: int = 10
    stride: int = 1
    channels: Sequence[str] | None = None

    def __post_init__(self):
        if self.mode not in ("tabular", "windowed"):
            raise ConfigError(f"unknown input geometry mode {self.mode!r}")


def to_model_input(dataset: TabularDataset, geometry: InputGeometry,
                   target: str = "label"):
    """Build the model tensor and its labels from a prepared table."""
    if target not in ("label", "type"):
        raise ConfigError(f"target must be 'label' or 'type', got {target!r}")
    ds = dataset
    if geometry.channels is not None:
        missing = [c for c in geometry.channels if c not in ds.columns]
        if missing:
            raise ShapeError(f"declared channels not in dataset: {missing}")
        ds = ds.select_columns(list(geometry.channels))

    if target == "type":
        if geometry.mode != "tabular":
            raise ConfigError("attack-type targets need tabular geometry")
        if ds.attack_type is None:
            raise DataError("dataset has no attack-type column")
        rows = np.flatnonzero(ds.attack_type != NO_ATTACK)
        if rows.size == 0:
            raise DataError("no attack rows to classify by type")
        ds = ds.subset(rows)
        y = ds.attack_type
    else:
        y = ds.label

    if geometry.mode == "tabular":
        x = np.repeat(ds.values[:, :, np.newaxis], geometry.window, axis=2)
        return np.ascontiguousarray(x), y.copy()

    cfg = transfer.SegmentationConfig(geometry.window, geometry.stride)
    windows = [transfer.segment(ch, cfg) for ch in ds.values.T]
    x = np.stack(windows, axis=1)
    starts = np.arange(x.shape[0]) * cfg.stride
    labels = np.array([transfer.window_label(ds.label[s:s + cfg.window]) for s in starts])
    return np.ascontiguousarray(x), labels


# ---------------------------------------------------------------------------
# prepared-dataset serialization and orchestration
# ---------------------------------------------------------------------------

def write_dataset_csv(dataset: TabularDataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(dataset.columns) + [LABEL_COLUMN]
        if dataset.attack_type is not None:
            header.append(TYPE_COLUMN)
        writer.writerow(header)
        for i in range(dataset.n_rows):
            row = [repr(float(v)) for v in dataset.values[i]] + [str(int(dataset.label[i]))]
            if dataset.attack_type is not None:
                row.append(str(int(dataset.attack_type[i])))
            writer.writerow(row)


def read_dataset_csv(path: str | Path) -> TabularDataset:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if LABEL_COLUMN not in header:
            raise SchemaError(f"{path}: missing {LABEL_COLUMN!r} column")
        has_type = TYPE_COLUMN in header
        label_at = header.index(LABEL_COLUMN)
        type_at = header.index(TYPE_COLUMN) if has_type else None
        feature_at = [j for j, c in enumerate(header)
                      if j != label_at and j != type_at]
        rows, labels, types = [], [], []
        for row_no, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                raise IngestError(f"{path}:{row_no}: expected {len(header)} cells")
            try:
                rows.append([float(cells[j]) for j in feature_at])
                labels.append(int(cells[label_at]))
                if has_type:
                    types.append(int(cells[type_at]))
            except ValueError as exc:
                raise IngestError(f"{path}:{row_no}: {exc}") from None
    return TabularDataset([header[j] for j in feature_at],
                          np.array(rows, dtype=np.float64),
                          np.array(labels, dtype=np.int64),
                          np.array(types, dtype=np.int64) if has_type else None)


@dataclass
class PreparedData:
    train: TabularDataset
    val: TabularDataset
    test: TabularDataset
    scaler: Scaler
    dropped: list[DroppedColumn]
    correlation: np.ndarray
    correlation_columns: list[str]
    outlier_rows: dict[str, list[int]] = field(default_factory=dict)


def prepare(raw: TabularDataset, schemas: Sequence[SensorSchema], seed: int,
            threshold: float = 0.95, esd_alpha: float = 0.05,
            esd_max_outliers: int = 5) -> PreparedData:
    """Run the full preparation chain on an ingested table.

    Split first, then fit everything (medians, pruning correlations, scaler)
    on the training split alone. The outlier test is reported per numeric
    column but rows are kept; synthetic attacks are themselves legitimate
    extreme values.
    """
    encoded = encode_labels(raw, schemas)
    train, val, test = split(encoded, seed)
    medians = compute_medians(train)
    train = impute(train, medians)
    val = impute(val, medians)
    test = impute(test, medians)

    outliers: dict[str, list[int]] = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EsdInapplicableWarning)
        for name in train.columns:
            flagged = detect_outliers_esd(train.column(name), esd_alpha, esd_max_outliers)
            if flagged:
                outliers[name] = flagged

    corr = correlation_matrix(train)
    corr_columns = list(train.columns)
    train, dropped = prune_redundant(train, threshold)
    keep = list(train.columns)
    val = val.select_columns(keep)
    test = test.select_columns(keep)

    scaler = fit_scaler(train)
    return PreparedData(normalize(train, scaler), normalize(val, scaler),
                        normalize(test, scaler), scaler, dropped, corr, corr_columns,
                        outliers)
