"""Dataset ingestion, windowing, truncation, and synthetic generation.

Supports the 26-column space-separated turbofan text format (unit, cycle,
3 operating settings, 21 sensors) and a two-domain synthetic degradation
generator for desk-scale experiments. Normalization is per-channel min-max
computed on training data only; test data reuses the training statistics.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

# 1-indexed positions among the 21 sensor columns; the complement is
# near-constant in the turbofan data and carries no degradation signal.
CMAPSS_SENSOR_SELECTION = (2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21)

_RANGE_GUARD = 1e-12


@dataclass
class TimeWindow:
    """One sliding-window sample: (channels, length) sensor matrix."""

    sensors: np.ndarray
    unit_id: object
    end_cycle: int
    rul_label: float | None = None


@dataclass
class DomainDataset:
    """A named collection of unit windows with normalization metadata."""

    name: str
    windows: list[TimeWindow]
    norm_min: np.ndarray
    norm_max: np.ndarray
    completeness: str = "complete"  # "complete" | "truncated"
    kept_fraction: float | None = None
    unit_life: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.windows[0].sensors.shape[0] if self.windows else len(self.norm_min)

    @property
    def window_length(self) -> int:
        return self.windows[0].sensors.shape[1] if self.windows else 0

    def units(self) -> list:
        seen = {}
        for w in self.windows:
            seen.setdefault(w.unit_id, None)
        return list(seen)

    def windows_by_unit(self) -> dict:
        """Unit -> [(window index, TimeWindow)] ordered by end cycle."""
        grouped: dict = {}
        for i, w in enumerate(self.windows):
            grouped.setdefault(w.unit_id, []).append((i, w))
        for unit in grouped:
            grouped[unit].sort(key=lambda item: item[1].end_cycle)
        return grouped

    def labels(self) -> np.ndarray:
        out = np.empty(len(self.windows))
        for i, w in enumerate(self.windows):
            if w.rul_label is None:
                raise DataError(f"dataset {self.name!r} has unlabeled windows "
                                f"(unit={w.unit_id})")
            out[i] = w.rul_label
        return out

    def stacked(self) -> np.ndarray:
        return np.stack([w.sensors for w in self.windows])


def make_windows(series: np.ndarray, ruls, cycles, unit_id,
                 length: int, stride: int = 1) -> list[TimeWindow]:
    """Slide a window of the given length over one unit's (T, M) series.

    Produces floor((T - length) / stride) + 1 windows; each window's label
    is the RUL at its end cycle. Units shorter than the window are skipped
    with a warning and yield no windows.
    """
    series = np.asarray(series, dtype=np.float64)
    total = series.shape[0]
    if total < length:
        warnings.warn(f"unit {unit_id}: series length {total} < window "
                      f"length {length}, skipped")
        return []
    cycles = np.asarray(cycles)
    out = []
    for start in range(0, total - length + 1, stride):
        end = start + length
        label = None if ruls is None else float(ruls[end - 1])
        out.append(TimeWindow(sensors=series[start:end].T.copy(),
                              unit_id=unit_id,
                              end_cycle=int(cycles[end - 1]),
                              rul_label=label))
    return out


def _normalize(series: np.ndarray, norm_min: np.ndarray, norm_max: np.ndarray) -> np.ndarray:
    span = np.maximum(norm_max - norm_min, _RANGE_GUARD)
    return (series - norm_min) / span


def _denormalize(series: np.ndarray, norm_min: np.ndarray, norm_max: np.ndarray) -> np.ndarray:
    span = np.maximum(norm_max - norm_min, _RANGE_GUARD)
    return series * span + norm_min


# -- turbofan text format -------------------------------------------------------

def _parse_cmapss(path) -> dict:
    """Parse a 26-column file into unit -> (cycles, raw 21-sensor matrix)."""
    units: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 26:
                raise DataError(f"{path}: line {lineno}: expected 26 columns, "
                                f"got {len(parts)}")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
            unit = int(row[0])
            units.setdefault(unit, []).append((int(row[1]), row[5:26]))
    series = {}
    for unit, rows in units.items():
        rows.sort(key=lambda r: r[0])
        cycles = np.array([r[0] for r in rows], dtype=int)
        sensors = np.array([r[1] for r in rows], dtype=np.float64)
        series[unit] = (cycles, sensors)
    return series


def load_cmapss(train_path, test_path, rul_path, *, window_length: int = 30,
                stride: int = 1, rul_cap: float | None = 130.0,
                sensor_columns=CMAPSS_SENSOR_SELECTION,
                name: str = "cmapss") -> tuple[DomainDataset, DomainDataset]:
    """Load one turbofan sub-dataset as (train, test) DomainDatasets.

    Training units run to failure, so RUL = total - cycle, capped. Test
    units stop early; the RUL file supplies the remaining life after each
    unit's last recorded cycle. Both splits are normalized with the
    training min/max.
    """
    cols = np.asarray(sensor_columns, dtype=int) - 1
    train_series = _parse_cmapss(train_path)
    test_series = _parse_cmapss(test_path)

    if rul_path is None:
        raise DataError("test ingestion requires the RUL file")
    rul_values = []
    with open(rul_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.split():
                continue
            try:
                rul_values.append(float(line.split()[0]))
            except ValueError as exc:
                raise DataError(f"{rul_path}: line {lineno}: {exc}") from exc
    test_units = sorted(test_series)
    if len(rul_values) != len(test_units):
        raise DataError(f"RUL file has {len(rul_values)} entries for "
                        f"{len(test_units)} test units")

    train_rows = np.vstack([sensors[:, cols] for _, sensors in train_series.values()])
    norm_min = train_rows.min(axis=0)
    norm_max = train_rows.max(axis=0)

    def build(series_map, final_ruls, split) -> DomainDataset:
        windows: list[TimeWindow] = []
        unit_life = {}
        for unit in sorted(series_map):
            cycles, sensors = series_map[unit]
            selected = _normalize(sensors[:, cols], norm_min, norm_max)
            last = int(cycles[-1])
            total = last if final_ruls is None else last + int(final_ruls[unit])
            ruls = (total - cycles).astype(np.float64)
            if rul_cap is not None:
                ruls = np.minimum(ruls, rul_cap)
            windows.extend(make_windows(selected, ruls, cycles, unit,
                                        window_length, stride))
            unit_life[unit] = total
        return DomainDataset(name=f"{name}-{split}", windows=windows,
                             norm_min=norm_min.copy(), norm_max=norm_max.copy(),
                             unit_life=unit_life)

    train = build(train_series, None, "train")
    test = build(test_series,
                 {unit: rul_values[i] for i, unit in enumerate(test_units)},
                 "test")
    return train, test


# -- truncation -----------------------------------------------------------------

def truncate_target(dataset: DomainDataset, keep_fraction: float) -> DomainDataset:
    """Keep only each unit's first floor(keep_fraction * total) cycles.

    Labels are removed (the truncated domain is unlabeled) and channels
    are re-normalized against the retained data, mirroring a pipeline
    that truncates before preprocessing.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    if dataset.completeness != "complete":
        raise DataError(f"dataset {dataset.name!r} is already truncated")

    kept: list[TimeWindow] = []
    for w in dataset.windows:
        total = dataset.unit_life.get(w.unit_id)
        if total is None:
            raise DataError(f"unit {w.unit_id} has unknown total life")
        if w.end_cycle <= int(np.floor(keep_fraction * total)):
            kept.append(TimeWindow(w.sensors.copy(), w.unit_id, w.end_cycle, None))

    if keep_fraction == 1.0:
        norm_min, norm_max = dataset.norm_min.copy(), dataset.norm_max.copy()
    else:
        raw = [_denormalize(w.sensors.T, dataset.norm_min, dataset.norm_max)
               for w in kept]
        stacked = np.vstack(raw) if raw else np.zeros((0, dataset.n_channels))
        if stacked.shape[0] == 0:
            raise DataError("truncation removed every window")
        norm_min = stacked.min(axis=0)
        norm_max = stacked.max(axis=0)
        for w, r in zip(kept, raw):
            w.sensors = _normalize(r, norm_min, norm_max).T.copy()

    return DomainDataset(name=dataset.name, windows=kept,
                         norm_min=norm_min, norm_max=norm_max,
                         completeness="truncated", kept_fraction=keep_fraction,
                         unit_life={u: None for u in dataset.unit_life})


# -- synthetic generator ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """One synthetic domain: power-law degradation plus channel offsets."""

    name: str = "synthetic"
    units: int = 20
    channels: int = 6
    life_min: int = 80
    life_max: int = 140
    exponent: float = 1.0
    offset: float = 0.0
    noise: float = 0.02

    def __post_init__(self):
        if self.life_min <= 0 or self.life_max < self.life_min:
            raise ConfigError(f"invalid life range [{self.life_min}, {self.life_max}]")
        if self.units < 1 or self.channels < 1:
            raise ConfigError("units and channels must be >= 1")


def generate_synthetic(config: SyntheticConfig, seed: int, *,
                       window_length: int = 30, stride: int = 1,
                       norm_stats: tuple[np.ndarray, np.ndarray] | None = None
                       ) -> DomainDataset:
    """Generate a labeled run-to-failure domain.

    Channel m follows base_m + slope_m * (t / T)^p + noise, where base and
    slope are fixed per-channel patterns so that two domains with the same
    seed differ exactly by their configured offset and exponent. Exact RUL
    labels (T - t) are attached. Pass norm_stats from a training dataset to
    normalize a test split without leaking its own statistics.
    """
    rng = np.random.default_rng(seed)
    m = config.channels
    ramp = np.arange(m) / max(m - 1, 1)
    base = config.offset + 0.1 * ramp
    slope = 0.5 + ramp

    lives = rng.integers(config.life_min, config.life_max + 1, size=config.units)
    raw_series = []
    for unit, total in enumerate(lives, start=1):
        t = np.arange(1, total + 1)
        trend = base + slope * (t[:, None] / total) ** config.exponent
        sensors = trend + config.noise * rng.standard_normal((total, m))
        raw_series.append((unit, int(total), sensors))

    if norm_stats is None:
        all_rows = np.vstack([s for _, _, s in raw_series])
        norm_min, norm_max = all_rows.min(axis=0), all_rows.max(axis=0)
    else:
        norm_min, norm_max = (np.asarray(norm_stats[0], dtype=np.float64),
                              np.asarray(norm_stats[1], dtype=np.float64))

    windows: list[TimeWindow] = []
    unit_life = {}
    for unit, total, sensors in raw_series:
        cycles = np.arange(1, total + 1)
        ruls = (total - cycles).astype(np.float64)
        normalized = _normalize(sensors, norm_min, norm_max)
        windows.extend(make_windows(normalized, ruls, cycles, unit,
                                    window_length, stride))
        unit_life[unit] = total
    return DomainDataset(name=config.name, windows=windows,
                         norm_min=norm_min, norm_max=norm_max,
                         unit_life=unit_life)


# -- dataset files ----------------------------------------------------------------

def export_dataset(dataset: DomainDataset, path) -> Path:
    """Write a dataset as delimited text with a JSON metadata comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m, length = dataset.n_channels, dataset.window_length
    meta = {
        "name": dataset.name,
        "completeness": dataset.completeness,
        "kept_fraction": dataset.kept_fraction,
        "channels": m,
        "window_length": length,
        "norm_min": [repr(v) for v in dataset.norm_min.tolist()],
        "norm_max": [repr(v) for v in dataset.norm_max.tolist()],
        "unit_life": {str(u): t for u, t in dataset.unit_life.items()},
    }
    header = ["unit", "end_cycle", "rul"] + [
        f"c{c}_t{t}" for c in range(m) for t in range(length)]
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write(",".join(header) + "\n")
        for w in dataset.windows:
            label = "" if w.rul_label is None else repr(w.rul_label)
            values = ",".join(repr(v) for v in w.sensors.reshape(-1).tolist())
            fh.write(f"{w.unit_id},{w.end_cycle},{label},{values}\n")
    return path


def _coerce_unit(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def load_dataset(path) -> DomainDataset:
    """Read a dataset written by export_dataset; exact float round-trip."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise DataError(f"{path}: line 1: missing metadata header")
        try:
            meta = json.loads(first[2:])
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line 1: bad metadata: {exc}") from exc
        fh.readline()  # column header
        m, length = meta["channels"], meta["window_length"]
        windows = []
        for lineno, line in enumerate(fh, start=3):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 3 + m * length:
                raise DataError(f"{path}: line {lineno}: expected "
                                f"{3 + m * length} fields, got {len(parts)}")
            label = None if parts[2] == "" else float(parts[2])
            sensors = np.array(parts[3:], dtype=np.float64).reshape(m, length)
            windows.append(TimeWindow(sensors, _coerce_unit(parts[0]),
                                      int(parts[1]), label))
    unit_life = {_coerce_unit(u): t for u, t in meta["unit_life"].items()}
    return DomainDataset(
        name=meta["name"], windows=windows,
        norm_min=np.array([float(v) for v in meta["norm_min"]]),
        norm_max=np.array([float(v) for v in meta["norm_max"]]),
        completeness=meta["completeness"], kept_fraction=meta["kept_fraction"],
        unit_life=unit_life)
