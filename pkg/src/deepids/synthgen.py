"""Seeded synthetic seven-sensor telemetry with injectable attack patterns.

Sensors mimic the schema of the usual IoT telemetry feeds (fridge, GPS
tracker, motion light, garage door, modbus, thermostat, weather). Numeric
features are noisy sinusoids, categorical features are small Markov chains.
Each of the nine attack kinds perturbs the targeted sensor in a distinctive
way, so severity acts as a separability knob while ground-truth labels follow
the scenario intervals exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, ScenarioError
from .kvtext import read_kv, write_kv
from .pipeline import (ATTACK_TYPES, NO_ATTACK, NORMAL_TYPE, FeatureSpec,
                       SensorSchema, TabularDataset, save_schema)

EPOCH_BASE = 1577836800  # 2020-01-01T00:00:00Z, start of the synthetic clock


@dataclass(frozen=True)
class NumericFeature:
    name: str
    offset: float
    amplitude: float
    period: float
    phase: float = 0.0
    noise_sd: float = 0.1

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ConfigError(f"{self.name}: noise sd must be >= 0")
        if self.period <= 0:
            raise ConfigError(f"{self.name}: period must be positive")


@dataclass(frozen=True)
class CategoricalFeature:
    name: str
    states: tuple[str, ...]
    transition: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        n = len(self.states)
        if len(self.transition) != n or any(len(row) != n for row in self.transition):
            raise ConfigError(f"{self.name}: transition matrix must be {n}x{n}")
        for row in self.transition:
            if not np.isclose(sum(row), 1.0):
                raise ConfigError(f"{self.name}: transition rows must sum to 1")


@dataclass(frozen=True)
class SensorProfile:
    name: str
    numeric: tuple[NumericFeature, ...] = ()
    categorical: tuple[CategoricalFeature, ...] = ()

    def schema(self) -> SensorSchema:
        specs = [FeatureSpec(f.name, "numeric") for f in self.numeric]
        specs += [FeatureSpec(c.name, "categorical", c.states) for c in self.categorical]
        return SensorSchema(self.name, tuple(specs))

    def feature_names(self) -> list[str]:
        return [f.name for f in self.numeric] + [c.name for c in self.categorical]


def default_profiles() -> tuple[SensorProfile, ...]:
    onoff = ("off", "on")
    return (
        SensorProfile("fridge",
                      (NumericFeature("fridge_temperature", 4.0, 1.5, 50.0, 0.0, 0.15),),
                      (CategoricalFeature("temperature_condition", ("low", "high"),
                                          ((0.9, 0.1), (0.3, 0.7))),)),
        SensorProfile("gps_tracker",
                      (NumericFeature("latitude", 23.8, 0.02, 200.0, 0.3, 0.002),
                       NumericFeature("longitude", 90.4, 0.03, 170.0, 1.0, 0.002))),
        SensorProfile("motion_light",
                      (),
                      (CategoricalFeature("motion_status", onoff,
                                          ((0.85, 0.15), (0.5, 0.5))),
                       CategoricalFeature("light_status", onoff,
                                          ((0.9, 0.1), (0.2, 0.8))))),
        SensorProfile("garage_door",
                      (),
                      (CategoricalFeature("door_state", ("closed", "open"),
                                          ((0.95, 0.05), (0.4, 0.6))),
                       CategoricalFeature("sphone_signal", ("false", "true"),
                                          ((0.9, 0.1), (0.3, 0.7))))),
        SensorProfile("modbus",
                      (NumericFeature("input_register", 120.0, 40.0, 60.0, 0.0, 3.0),
                       NumericFeature("discrete_register", 30.0, 10.0, 45.0, 2.0, 1.0),
                       NumericFeature("holding_register", 500.0, 120.0, 90.0, 0.7, 8.0),
                       NumericFeature("coil_over_register", 12.0, 5.0, 35.0, 1.3, 0.5))),
        SensorProfile("thermostat",
                      (NumericFeature("current_temperature", 22.0, 3.0, 120.0, 0.4, 0.2),),
                      (CategoricalFeature("thermostat_status", onoff,
                                          ((0.8, 0.2), (0.3, 0.7))),)),
        SensorProfile("weather",
                      (NumericFeature("air_temperature", 18.0, 8.0, 140.0, 0.9, 0.4),
                       NumericFeature("air_pressure", 1012.0, 9.0, 260.0, 2.2, 0.8),
                       NumericFeature("air_humidity", 60.0, 20.0, 110.0, 1.7, 1.5))),
    )


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    sensor: str
    start: int
    end: int
    severity: float = 1.0

    def __post_init__(self):
        if self.kind not in ATTACK_TYPES:
            raise ScenarioError(f"unknown attack kind {self.kind!r}")
        if self.start < 0 or self.end <= self.start:
            raise ScenarioError(f"bad interval [{self.start}, {self.end})")
        if self.severity <= 0:
            raise ScenarioError(f"severity must be positive, got {self.severity}")


# --- attack signatures ------------------------------------------------------

def _square_bursts(n: int, period: int = 4) -> np.ndarray:
    return ((np.arange(n) // period) % 2 == 0).astype(np.float64)


def _apply_dos(prof, num, cat, sl, sev, rng):
    # bursts oscillating between two saturated levels, both above the normal
    # envelope, so every attacked sample deviates in one direction
    n = sl.stop - sl.start
    burst = 1.5 + 1.5 * _square_bursts(n)
    for f in prof.numeric:
        num[f.name][sl] = f.offset + sev * f.amplitude * burst
    for c in prof.categorical:
        cat[c.name][sl] = [c.states[0]] * n


def _apply_ddos(prof, num, cat, sl, sev, rng):
    n = sl.stop - sl.start
    for f in prof.numeric:
        num[f.name][sl] = f.offset + 4.0 * sev * f.amplitude
    for c in prof.categorical:
        cat[c.name][sl] = [c.states[-1]] * n


def _apply_injection(prof, num, cat, sl, sev, rng):
    for f in prof.numeric:
        num[f.name][sl] = f.offset + 5.0 * sev * f.amplitude


def _apply_mitm(prof, num, cat, sl, sev, rng):
    for f in prof.numeric:
        num[f.name][sl] += 1.5 * sev * f.amplitude


def _apply_backdoor(prof, num, cat, sl, sev, rng):
    for f in prof.numeric:
        num[f.name][sl][::5] += 4.0 * sev * f.amplitude
    for c in prof.categorical:
        states = cat[c.name][sl]
        for i in range(0, len(states), 5):
            states[i] = c.states[-1]
        cat[c.name][sl] = states


def _apply_password(prof, num, cat, sl, sev, rng):
    n = sl.stop - sl.start
    for f in prof.numeric:
        num[f.name][sl] += 0.8 * sev * f.amplitude * rng.standard_normal(n)
    for c in prof.categorical:
        cat[c.name][sl] = [c.states[k] for k in rng.integers(0, len(c.states), n)]


def _apply_scanning(prof, num, cat, sl, sev, rng):
    n = sl.stop - sl.start
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    for f in prof.numeric:
        num[f.name][sl] += 1.2 * sev * f.amplitude * alt
    for c in prof.categorical:
        cat[c.name][sl] = [c.states[i % len(c.states)] for i in range(n)]


def _apply_xss(prof, num, cat, sl, sev, rng):
    n = sl.stop - sl.start
    for f in prof.numeric:
        num[f.name][sl] += 2.0 * sev * f.amplitude * rng.standard_normal(n)
    for c in prof.categorical:
        flips = rng.random(n) < 0.5
        states = cat[c.name][sl]
        picks = rng.integers(0, len(c.states), n)
        cat[c.name][sl] = [c.states[picks[i]] if flips[i] else states[i] for i in range(n)]


def _apply_ransomware(prof, num, cat, sl, sev, rng):
    # rising drift that starts already outside the normal envelope
    n = sl.stop - sl.start
    ramp = np.linspace(3.0 * sev, 6.0 * sev, n)
    for f in prof.numeric:
        num[f.name][sl] += f.amplitude * ramp
    for c in prof.categorical:
        cat[c.name][sl] = [c.states[0]] * n


_ATTACKS = {"dos": _apply_dos, "ddos": _apply_ddos, "injection": _apply_injection,
            "mitm": _apply_mitm, "backdoor": _apply_backdoor, "password": _apply_password,
            "scanning": _apply_scanning, "xss": _apply_xss, "ransomware": _apply_ransomware}


# --- generation -------------------------------------------------------------

@dataclass
class SensorSeries:
    profile: SensorProfile
    numeric: dict[str, np.ndarray]
    categorical: dict[str, list[str]]
    label: np.ndarray
    attack_type: np.ndarray


@dataclass
class GeneratedData:
    profiles: tuple[SensorProfile, ...]
    length: int
    seed: int
    sensors: dict[str, SensorSeries]
    combined: TabularDataset      # raw (pre-encoding) combined table

    def schemas(self) -> list[SensorSchema]:
        return [p.schema() for p in self.profiles]

    def channel_series(self, column: str) -> tuple[np.ndarray, np.ndarray]:
        """One feature as an encoded float series plus its own sensor's labels
        (not the combined flag), the shape source pre-training consumes."""
        for prof in self.profiles:
            series = self.sensors[prof.name]
            for f in prof.numeric:
                if f.name == column:
                    return series.numeric[column].copy(), series.label.copy()
            for c in prof.categorical:
                if c.name == column:
                    codes = np.array([c.states.index(v) for v in series.categorical[column]],
                                     dtype=np.float64)
                    return codes, series.label.copy()
        raise ConfigError(f"no sensor feature named {column!r}")

    def write_csvs(self, out_dir: str | Path) -> dict[str, Path]:
        """Emit per-sensor CSVs, the combined CSV, and the schema files."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        schema_dir = out_dir / "schemas"
        schema_dir.mkdir(exist_ok=True)
        written: dict[str, Path] = {}
        stamps = _time_columns(self.length)
        for prof in self.profiles:
            series = self.sensors[prof.name]
            path = out_dir / f"{prof.name}.csv"
            _write_csv(path, prof.feature_names(), stamps, _sensor_cells(series),
                       series.label, series.attack_type)
            save_schema(prof.schema(), schema_dir / f"{prof.name}.schema")
            written[prof.name] = path
        combined_path = out_dir / "combined.csv"
        cells = [[_format_cell(v) for v in row] for row in self.combined.values]
        _write_csv(combined_path, self.combined.columns, stamps, cells,
                   self.combined.label, self.combined.attack_type)
        save_schema(combined_schema(self.profiles), schema_dir / "combined.schema")
        written["combined"] = combined_path
        return written


def combined_schema(profiles) -> SensorSchema:
    specs = []
    for prof in profiles:
        specs.extend(prof.schema().features)
    return SensorSchema("combined", tuple(specs))


def generate(profiles, length: int, scenarios, seed: int) -> GeneratedData:
    """Deterministically synthesize labeled telemetry with planted attacks."""
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    profiles = tuple(profiles)
    names = {p.name for p in profiles}
    scenarios = list(scenarios)
    by_sensor: dict[str, list[tuple[int, AttackScenario]]] = {}
    for sci, sc in enumerate(scenarios):
        if sc.sensor not in names:
            raise ScenarioError(f"scenario targets unknown sensor {sc.sensor!r}")
        if sc.end > length:
            raise ScenarioError(f"scenario [{sc.start}, {sc.end}) exceeds length {length}")
        by_sensor.setdefault(sc.sensor, []).append((sci, sc))
    for sensor, items in by_sensor.items():
        items.sort(key=lambda pair: pair[1].start)
        for (_, prev), (_, cur) in zip(items, items[1:]):
            if cur.start < prev.end:
                raise ScenarioError(f"overlapping scenarios on sensor {sensor!r}")

    t = np.arange(length, dtype=np.float64)
    sensors: dict[str, SensorSeries] = {}
    for si, prof in enumerate(profiles):
        rng = np.random.default_rng([seed, si])
        num = {f.name: f.offset + f.amplitude * np.sin(2 * np.pi * t / f.period + f.phase)
                       + f.noise_sd * rng.standard_normal(length)
               for f in prof.numeric}
        cat = {c.name: _markov_walk(c, length, rng) for c in prof.categorical}
        label = np.ones(length, dtype=np.int64)
        attack_type = np.full(length, NO_ATTACK, dtype=np.int64)
        for sci, sc in by_sensor.get(prof.name, ()):
            arng = np.random.default_rng([seed, si, sci])
            _ATTACKS[sc.kind](prof, num, cat, slice(sc.start, sc.end), sc.severity, arng)
            label[sc.start:sc.end] = 0
            attack_type[sc.start:sc.end] = ATTACK_TYPES.index(sc.kind)
        sensors[prof.name] = SensorSeries(prof, num, cat, label, attack_type)

    combined = _combine(profiles, sensors, length)
    return GeneratedData(profiles, length, seed, sensors, combined)


def _markov_walk(feature: CategoricalFeature, length: int,
                 rng: np.random.Generator) -> list[str]:
    matrix = np.asarray(feature.transition)
    state = 0
    walk = []
    for _ in range(length):
        walk.append(feature.states[state])
        state = int(rng.choice(len(feature.states), p=matrix[state]))
    return walk


def _combine(profiles, sensors, length: int) -> TabularDataset:
    columns: list[str] = []
    cols: list = []
    for prof in profiles:
        series = sensors[prof.name]
        for f in prof.numeric:
            columns.append(f.name)
            cols.append(series.numeric[f.name])
        for c in prof.categorical:
            columns.append(c.name)
            cols.append(series.categorical[c.name])
    values = np.empty((length, len(columns)), dtype=object)
    for j, col in enumerate(cols):
        for i in range(length):
            values[i, j] = float(col[i]) if isinstance(col, np.ndarray) else col[i]
    label = np.minimum.reduce([sensors[p.name].label for p in profiles])
    attack_type = np.full(length, NO_ATTACK, dtype=np.int64)
    for prof in reversed(profiles):   # earlier sensors win on concurrent attacks
        s = sensors[prof.name]
        hit = s.attack_type != NO_ATTACK
        attack_type[hit] = s.attack_type[hit]
    return TabularDataset(columns, values, label, attack_type)


def _time_columns(length: int) -> list[tuple[str, str, str]]:
    out = []
    for i in range(length):
        ts = EPOCH_BASE + i
        dt = datetime.fromtimestamp(ts, tz=timezone.utc)
        out.append((dt.strftime("%Y-%m-%d"), dt.strftime("%H:%M:%S"), str(ts)))
    return out


def _sensor_cells(series: SensorSeries) -> list[list[str]]:
    names = series.profile.feature_names()
    rows = []
    for i in range(series.label.size):
        row = []
        for name in names:
            if name in series.numeric:
                row.append(repr(float(series.numeric[name][i])))
            else:
                row.append(series.categorical[name][i])
        rows.append(row)
    return rows


def _format_cell(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _write_csv(path: Path, feature_names, stamps, cells, label, attack_type) -> None:
    lines = ["date,time,timestamp," + ",".join(feature_names) + ",label,type"]
    for i, row in enumerate(cells):
        kind = NORMAL_TYPE if attack_type[i] == NO_ATTACK else ATTACK_TYPES[attack_type[i]]
        lines.append(",".join(stamps[i]) + "," + ",".join(str(c) for c in row)
                     + f",{int(label[i])},{kind}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- scenario files and benchmarks -----------------------------------------

def load_scenario_file(path: str | Path):
    """Parse a key-value scenario file into ``(length, scenarios, seed)``."""
    kv = read_kv(path)
    if "length" not in kv:
        raise ConfigError(f"{path}: missing 'length'")
    length = int(kv["length"])
    seed = int(kv.get("seed", "0"))
    scenarios = []
    i = 1
    while f"scenario.{i}.kind" in kv:
        scenarios.append(AttackScenario(
            kind=kv[f"scenario.{i}.kind"],
            sensor=kv[f"scenario.{i}.sensor"],
            start=int(kv[f"scenario.{i}.start"]),
            end=int(kv[f"scenario.{i}.end"]),
            severity=float(kv.get(f"scenario.{i}.severity", "1.0")),
        ))
        i += 1
    return length, scenarios, seed


def save_scenario_file(path: str | Path, length: int, scenarios, seed: int = 0) -> None:
    kv = {"length": str(length), "seed": str(seed)}
    for i, sc in enumerate(scenarios, start=1):
        kv[f"scenario.{i}.kind"] = sc.kind
        kv[f"scenario.{i}.sensor"] = sc.sensor
        kv[f"scenario.{i}.start"] = str(sc.start)
        kv[f"scenario.{i}.end"] = str(sc.end)
        kv[f"scenario.{i}.severity"] = repr(sc.severity)
    write_kv(path, kv)


@dataclass
class Benchmark:
    name: str
    parts: dict[str, GeneratedData] = field(default_factory=dict)


# attacks with a per-row out-of-range numeric signature, so the bundle is
# separable for a plain linear probe (the calibration gate)
SEPARABLE_SMALL_SCENARIOS = (
    AttackScenario("dos", "modbus", 40, 90),
    AttackScenario("injection", "weather", 120, 170),
    AttackScenario("ransomware", "fridge", 220, 270),
    AttackScenario("ddos", "thermostat", 330, 380),
)

# channels used by the windowed transfer experiments: one series per sensor
TRANSFER_CHANNELS = ("fridge_temperature", "latitude", "motion_status", "door_state",
                     "holding_register", "current_temperature", "air_temperature")


def _transfer_source_scenarios(length: int):
    targets = (("dos", "modbus"), ("injection", "weather"), ("ransomware", "fridge"),
               ("scanning", "garage_door"), ("backdoor", "thermostat"),
               ("password", "gps_tracker"), ("xss", "motion_light"),
               ("ddos", "modbus"), ("mitm", "weather"))
    scenarios = []
    start = 60
    i = 0
    while start + 80 <= length:
        kind, sensor = targets[i % len(targets)]
        scenarios.append(AttackScenario(kind, sensor, start, start + 80, 1.0))
        start += 200
        i += 1
    return scenarios


# target attacks share the source kinds but run much weaker, so single rows
# are ambiguous and the window-level patterns learned on the source matter
TRANSFER_TARGET_SCENARIOS = (
    AttackScenario("dos", "modbus", 15, 40, 0.3),
    AttackScenario("injection", "weather", 55, 80, 0.3),
)


def _imbalanced_scenarios():
    lengths = (34, 33, 33, 33, 33, 34, 33, 33, 34)   # exactly 300 attack rows
    sensors = ("modbus", "weather", "fridge", "garage_door", "thermostat",
               "gps_tracker", "motion_light", "modbus", "weather")
    scenarios = []
    start = 50
    for kind, sensor, n in zip(ATTACK_TYPES, sensors, lengths):
        scenarios.append(AttackScenario(kind, sensor, start, start + n, 1.0))
        start += n + 60
    return scenarios


def make_benchmark(name: str, seed: int) -> Benchmark:
    """Fixed desk-scale dataset bundles with known ground truth."""
    profiles = default_profiles()
    if name == "separable-small":
        return Benchmark(name, {"combined": generate(profiles, 500,
                                                     SEPARABLE_SMALL_SCENARIOS, seed)})
    if name == "transfer-pair":
        source = generate(profiles, 5000, _transfer_source_scenarios(5000), seed)
        target = generate(profiles, 100, TRANSFER_TARGET_SCENARIOS, seed + 1)
        return Benchmark(name, {"source": source, "target": target})
    if name == "imbalanced":
        return Benchmark(name, {"combined": generate(profiles, 1000,
                                                     _imbalanced_scenarios(), seed)})
    raise ConfigError(f"unknown benchmark {name!r} (expected separable-small, "
                      f"transfer-pair, or imbalanced)")
