"""Ingestion, cleaning, correlation pruning, scaling, splits, model input."""

import numpy as np
import pytest

from deepids import pipeline
from deepids.errors import (ConfigError, ConstantFeatureError, CorrelationError,
                            EncodeError, EsdInapplicableWarning, ImputeError,
                            IngestError, SchemaError, ShapeError, StratificationError)
from deepids.pipeline import (FeatureSpec, InputGeometry, SensorSchema, TabularDataset,
                              compute_medians, correlation_matrix, detect_outliers_esd,
                              encode_labels, fit_scaler, impute, ingest, load_scaler,
                              load_schema, normalize, pearson, prepare, prune_redundant,
                              read_dataset_csv, save_scaler, save_schema, split,
                              to_model_input, write_dataset_csv)

from _oracles import esd_reference

DOOR = SensorSchema("garage_door", (
    FeatureSpec("door_state", "categorical", ("closed", "open")),
    FeatureSpec("sphone_signal", "categorical", ("false", "true")),
))
WEATHER = SensorSchema("weather", (
    FeatureSpec("air_temperature", "numeric"),
    FeatureSpec("air_pressure", "numeric"),
))


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows])
                    + "\n", encoding="utf-8")


def numeric_dataset(values, labels=None, columns=None):
    values = np.asarray(values, dtype=np.float64)
    labels = np.ones(values.shape[0], dtype=np.int64) if labels is None \
        else np.asarray(labels, dtype=np.int64)
    columns = columns or [f"f{j}" for j in range(values.shape[1])]
    return TabularDataset(list(columns), values, labels)


class TestSchema:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "door.schema"
        save_schema(DOOR, path)
        loaded = load_schema(path)
        assert loaded == DOOR

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError):
            SensorSchema("x", (FeatureSpec("a", "numeric"), FeatureSpec("a", "numeric")))

    def test_categorical_needs_vocabulary(self):
        with pytest.raises(SchemaError):
            FeatureSpec("state", "categorical", ())


class TestIngest:
    def test_same_schema_concatenates(self, tmp_path):
        header = ["air_temperature", "air_pressure", "label"]
        rows = [[20.0 + i, 1000.0 + i, 1] for i in range(10)]
        write_csv(tmp_path / "a.csv", header, rows)
        write_csv(tmp_path / "b.csv", header, rows)
        ds = ingest([(WEATHER, tmp_path / "a.csv"), (WEATHER, tmp_path / "b.csv")])
        assert ds.n_rows == 20
        assert ds.columns == ["air_temperature", "air_pressure"]

    def test_time_columns_dropped(self, tmp_path):
        header = ["date", "time", "timestamp", "air_temperature", "air_pressure", "label"]
        rows = [["2020-01-01", "00:00:00", "12345", 20.0, 1000.0, 1]]
        write_csv(tmp_path / "w.csv", header, rows)
        ds = ingest([(WEATHER, tmp_path / "w.csv")])
        assert "timestamp" not in ds.columns and "date" not in ds.columns

    def test_unknown_column_named_in_error(self, tmp_path):
        header = ["air_temperature", "air_pressure", "altitude", "label"]
        write_csv(tmp_path / "w.csv", header, [[1.0, 2.0, 3.0, 1]])
        with pytest.raises(SchemaError, match="altitude"):
            ingest([(WEATHER, tmp_path / "w.csv")])

    def test_missing_schema_column_named_in_error(self, tmp_path):
        write_csv(tmp_path / "w.csv", ["air_temperature", "label"], [[1.0, 1]])
        with pytest.raises(SchemaError, match="air_pressure"):
            ingest([(WEATHER, tmp_path / "w.csv")])

    def test_unparseable_cell_reports_position(self, tmp_path):
        header = ["air_temperature", "air_pressure", "label"]
        write_csv(tmp_path / "w.csv", header, [[1.0, 2.0, 1], ["oops", 3.0, 1]])
        with pytest.raises(IngestError, match=r"w\.csv:3.*air_temperature"):
            ingest([(WEATHER, tmp_path / "w.csv")])

    def test_union_marks_missing(self, tmp_path):
        write_csv(tmp_path / "w.csv", ["air_temperature", "air_pressure", "label"],
                  [[1.0, 2.0, 1]])
        write_csv(tmp_path / "d.csv", ["door_state", "sphone_signal", "label"],
                  [["open", "true", 0]])
        ds = ingest([(WEATHER, tmp_path / "w.csv"), (DOOR, tmp_path / "d.csv")])
        assert ds.n_rows == 2 and len(ds.columns) == 4
        assert ds.column("door_state")[0] is None
        assert ds.column("air_temperature")[1] is None

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(IngestError):
            ingest([(WEATHER, tmp_path / "nope.csv")])


class TestEncode:
    def test_declared_vocabulary_codes(self, tmp_path):
        write_csv(tmp_path / "d.csv", ["door_state", "sphone_signal", "label"],
                  [["open", "false", 1], ["closed", "true", 0]])
        ds = encode_labels(ingest([(DOOR, tmp_path / "d.csv")]), [DOOR])
        np.testing.assert_array_equal(ds.column("door_state"), [1.0, 0.0])
        np.testing.assert_array_equal(ds.column("sphone_signal"), [0.0, 1.0])

    def test_out_of_vocabulary_raises(self, tmp_path):
        write_csv(tmp_path / "d.csv", ["door_state", "sphone_signal", "label"],
                  [["ajar", "true", 1]])
        with pytest.raises(EncodeError, match="ajar"):
            encode_labels(ingest([(DOOR, tmp_path / "d.csv")]), [DOOR])

    def test_single_value_vocabulary_becomes_constant(self):
        schema = SensorSchema("s", (FeatureSpec("mode", "categorical", ("auto",)),
                                    FeatureSpec("x", "numeric")))
        raw = TabularDataset(["mode", "x"],
                             np.array([["auto", 1.0], ["auto", 2.0]], dtype=object),
                             np.ones(2, dtype=np.int64))
        ds = encode_labels(raw, [schema])
        pruned, report = prune_redundant(ds)
        assert "mode" not in pruned.columns
        assert report[0].reason == "constant"


class TestOutliers:
    def test_flags_planted_outlier(self):
        rng = np.random.default_rng(2024)
        column = np.append(rng.standard_normal(29), 100.0)
        flagged = detect_outliers_esd(column, alpha=0.05, max_outliers=3)
        assert flagged == esd_reference(column, 0.05, 3)
        assert flagged == [29]

    def test_matches_reference_on_random_samples(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            column = rng.standard_normal(40)
            column[rng.integers(40)] += rng.uniform(4, 30)
            assert detect_outliers_esd(column, 0.05, 5) == esd_reference(column, 0.05, 5)

    def test_constant_column_unflagged(self):
        assert detect_outliers_esd(np.full(30, 3.0), 0.05, 3) == []

    def test_small_sample_warns(self):
        with pytest.warns(EsdInapplicableWarning):
            assert detect_outliers_esd(np.arange(10.0), 0.05, 2) == []

    def test_zero_max_outliers_rejected(self):
        with pytest.raises(ConfigError):
            detect_outliers_esd(np.arange(30.0), 0.05, 0)


class TestImpute:
    def test_median_fill(self):
        ds = numeric_dataset([[1.0], [np.nan], [3.0]])
        out = impute(ds)
        np.testing.assert_array_equal(out.values[:, 0], [1.0, 2.0, 3.0])

    def test_no_missing_is_identical(self):
        ds = numeric_dataset([[1.0, 2.0], [3.0, 4.0]])
        out = impute(ds)
        np.testing.assert_array_equal(out.values, ds.values)

    def test_all_missing_column_raises(self):
        ds = numeric_dataset([[np.nan], [np.nan]])
        with pytest.raises(ImputeError):
            compute_medians(ds)

    def test_external_medians(self):
        train = numeric_dataset([[0.0], [10.0], [20.0]])
        test = numeric_dataset([[np.nan]])
        out = impute(test, compute_medians(train))
        assert out.values[0, 0] == 10.0


class TestPearson:
    def test_exact_linearity(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_raises(self):
        with pytest.raises(CorrelationError):
            pearson([1, 2, 3], [5, 5, 5])

    def test_self_correlation_and_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(50)
        y = rng.standard_normal(50)
        assert abs(pearson(x, x) - 1.0) < 1e-12
        assert pearson(x, y) == pytest.approx(pearson(y, x), abs=1e-15)
        assert abs(pearson(x, y)) <= 1.0 + 1e-12


class TestPrune:
    def test_duplicate_dropped(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(30)
        ds = numeric_dataset(np.column_stack([x, x, rng.standard_normal(30)]))
        pruned, report = prune_redundant(ds, 0.95)
        assert pruned.columns == ["f0", "f2"]
        assert report[0].name == "f1" and report[0].partner == "f0"

    def test_threshold_one_keeps_near_duplicates(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(30)
        ds = numeric_dataset(np.column_stack([x, x + 1e-9 * rng.standard_normal(30)]))
        pruned, _ = prune_redundant(ds, 1.0)
        assert pruned.columns == ["f0", "f1"]

    def test_three_mutual_duplicates(self):
        x = np.random.default_rng(3).standard_normal(30)
        ds = numeric_dataset(np.column_stack([x, 2 * x, -x]))
        pruned, report = prune_redundant(ds, 0.95)
        assert pruned.columns == ["f0"]
        assert len(report) == 2

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(40)
        ds = numeric_dataset(np.column_stack([x, x, rng.standard_normal(40)]))
        once, _ = prune_redundant(ds, 0.9)
        twice, report = prune_redundant(once, 0.9)
        assert twice.columns == once.columns and report == []

    def test_emits_correlation_csv(self, tmp_path):
        ds = numeric_dataset(np.random.default_rng(5).standard_normal((20, 3)))
        path = tmp_path / "corr.csv"
        prune_redundant(ds, 0.95, correlation_csv=path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4 and lines[0].startswith("feature,")

    def test_bad_threshold(self):
        ds = numeric_dataset([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ConfigError):
            prune_redundant(ds, 0.0)

    def test_correlation_matrix_nan_for_constant(self):
        ds = numeric_dataset([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        corr = correlation_matrix(ds)
        assert np.isnan(corr[0, 1]) and np.isnan(corr[1, 1])
        assert corr[0, 0] == pytest.approx(1.0)


class TestScaler:
    def test_midpoint(self):
        train = numeric_dataset([[0.0], [10.0]])
        scaler = fit_scaler(train)
        out = normalize(numeric_dataset([[5.0]]), scaler)
        assert out.values[0, 0] == 0.5

    def test_endpoints(self):
        train = numeric_dataset([[2.0], [8.0]])
        scaler = fit_scaler(train)
        out = normalize(train, scaler)
        np.testing.assert_array_equal(out.values[:, 0], [0.0, 1.0])

    def test_out_of_range_clamps(self):
        train = numeric_dataset([[0.0], [10.0]])
        scaler = fit_scaler(train)
        raw = 12.0
        unclamped = (raw - 0.0) / (10.0 - 0.0)
        assert unclamped == pytest.approx(1.2)
        out = normalize(numeric_dataset([[raw]]), scaler)
        assert out.values[0, 0] == 1.0

    def test_constant_feature_raises(self):
        with pytest.raises(ConstantFeatureError):
            fit_scaler(numeric_dataset([[1.0], [1.0]]))

    def test_save_load_round_trip(self, tmp_path):
        train = numeric_dataset([[0.25, -3.0], [7.5, 11.0]])
        scaler = fit_scaler(train)
        save_scaler(scaler, tmp_path / "scaler.txt")
        loaded = load_scaler(tmp_path / "scaler.txt")
        assert loaded.columns == scaler.columns
        np.testing.assert_array_equal(loaded.mins, scaler.mins)
        np.testing.assert_array_equal(loaded.maxs, scaler.maxs)


class TestSplit:
    def make(self, n, attack_fraction=0.4, seed=0):
        rng = np.random.default_rng(seed)
        labels = (rng.random(n) >= attack_fraction).astype(np.int64)
        return numeric_dataset(rng.standard_normal((n, 3)), labels)

    def test_exact_ratios_at_1000(self):
        ds = numeric_dataset(np.random.default_rng(1).standard_normal((1000, 3)),
                             [1] * 500 + [0] * 500)
        train, val, test = split(ds, seed=1)
        assert (train.n_rows, val.n_rows, test.n_rows) == (640, 160, 200)

    def test_stratified_within_one_row(self):
        ds = self.make(500, attack_fraction=0.3, seed=3)
        train, val, test = split(ds, seed=2)
        global_attack = (ds.label == 0).mean()
        for part in (train, val, test):
            expected = global_attack * part.n_rows
            assert abs((part.label == 0).sum() - expected) <= 1.0

    def test_deterministic_disjoint_exhaustive(self):
        ds = self.make(200, seed=5)
        a = split(ds, seed=9)
        b = split(ds, seed=9)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.values, pb.values)
        assert sum(p.n_rows for p in a) == 200

    def test_too_few_rows(self):
        with pytest.raises(StratificationError):
            split(self.make(8), seed=0)

    def test_tiny_class_rejected(self):
        ds = numeric_dataset(np.random.default_rng(0).standard_normal((20, 2)),
                             [0] * 2 + [1] * 18)
        with pytest.raises(StratificationError):
            split(ds, seed=0)


class TestModelInput:
    def test_tabular_broadcast(self):
        rng = np.random.default_rng(0)
        ds = numeric_dataset(rng.standard_normal((6, 21)))
        x, y = to_model_input(ds, InputGeometry("tabular", window=10))
        assert x.shape == (6, 21, 10)
        for c in range(21):
            assert (x[:, c, :] == ds.values[:, c][:, None]).all()
        assert y.shape == (6,)

    def test_windowed_channels(self):
        rng = np.random.default_rng(1)
        ds = numeric_dataset(rng.standard_normal((40, 7)))
        x, y = to_model_input(ds, InputGeometry("windowed", window=8, stride=4))
        assert x.shape[1] == 7 and x.shape[2] == 8
        assert x.shape[0] == (40 - 8) // 4 + 1 == y.shape[0]

    def test_row_count_preserved(self):
        ds = numeric_dataset(np.random.default_rng(2).standard_normal((13, 4)))
        x, _ = to_model_input(ds, InputGeometry("tabular", window=12))
        assert x.shape[0] == 13

    def test_missing_channel_raises(self):
        ds = numeric_dataset(np.ones((5, 2)))
        with pytest.raises(ShapeError):
            to_model_input(ds, InputGeometry("tabular", channels=["f0", "f9"]))

    def test_type_target_uses_attack_rows(self):
        values = np.random.default_rng(3).standard_normal((6, 2))
        ds = TabularDataset(["f0", "f1"], values,
                            np.array([1, 0, 0, 1, 0, 1]),
                            np.array([-1, 2, 5, -1, 2, -1]))
        x, y = to_model_input(ds, InputGeometry("tabular", window=8), target="type")
        assert x.shape[0] == 3
        np.testing.assert_array_equal(y, [2, 5, 2])


class TestPrepare:
    def make_raw(self, n=120, seed=0):
        rng = np.random.default_rng(seed)
        labels = (rng.random(n) > 0.4).astype(np.int64)
        temp = rng.normal(20, 3, n) + 8 * (1 - labels)
        pressure = rng.normal(1000, 5, n)
        door = np.where(rng.random(n) < 0.5, "open", "closed")
        sphone = np.where(rng.random(n) < 0.5, "true", "false")
        values = np.empty((n, 4), dtype=object)
        for i in range(n):
            values[i] = [float(temp[i]), float(pressure[i]), door[i], sphone[i]]
        columns = ["air_temperature", "air_pressure", "door_state", "sphone_signal"]
        return TabularDataset(columns, values, labels)

    def test_invariants(self):
        raw = self.make_raw()
        prepared = prepare(raw, [WEATHER, DOOR], seed=0)
        for part in (prepared.train, prepared.val, prepared.test):
            assert not np.isnan(part.values).any()
            assert set(np.unique(part.label)).issubset({0, 1})
        assert prepared.train.values.min() >= 0.0
        assert prepared.train.values.max() <= 1.0

    def test_byte_deterministic(self, tmp_path):
        raw = self.make_raw(seed=4)
        outputs = []
        for run in range(2):
            prepared = prepare(raw, [WEATHER, DOOR], seed=11)
            path = tmp_path / f"train{run}.csv"
            write_dataset_csv(prepared.train, path)
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]


class TestDatasetCsv:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = TabularDataset(["a", "b"], rng.standard_normal((7, 2)),
                            rng.integers(0, 2, 7), rng.integers(-1, 9, 7))
        path = tmp_path / "ds.csv"
        write_dataset_csv(ds, path)
        loaded = read_dataset_csv(path)
        assert loaded.columns == ds.columns
        np.testing.assert_array_equal(loaded.values, ds.values)
        np.testing.assert_array_equal(loaded.label, ds.label)
        np.testing.assert_array_equal(loaded.attack_type, ds.attack_type)
