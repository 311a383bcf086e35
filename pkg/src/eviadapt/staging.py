"""Degradation-stage segmentation.

A labeled run-to-failure domain is split into three stages (sluggish,
moderate, accelerated) by lifecycle fraction with boundaries at 0.33 and
0.85. An unlabeled, possibly truncated domain is split into two stages at
0.70 using pseudo-RUL estimates from a pretrained model, normalized per
unit. A least-squares health index over the sensors is provided as a
diagnostic for the stage boundaries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DomainDataset
from .errors import DataError

SOURCE_BOUNDARIES = (0.33, 0.85)
TARGET_BOUNDARY = 0.70


@dataclass
class StagePartition:
    """Stage index and lifecycle fraction for every sample of one domain.

    Arrays are aligned with the dataset's window indices (the sample ids).
    Stages are 1-based; within a unit the stage index is non-decreasing in
    cycle time.
    """

    scheme: str  # "source-3" | "target-2"
    stages: np.ndarray
    fractions: np.ndarray
    sample_units: list
    sample_cycles: np.ndarray

    def __len__(self) -> int:
        return len(self.stages)

    def indices_for_stage(self, stage: int) -> np.ndarray:
        return np.flatnonzero(self.stages == stage)

    def stage_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.stages, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def export(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write("sample_id,unit,cycle,fraction,stage\n")
            for i in range(len(self.stages)):
                fh.write(f"{i},{self.sample_units[i]},{int(self.sample_cycles[i])},"
                         f"{repr(float(self.fractions[i]))},{int(self.stages[i])}\n")
        return path


def segment_source(dataset: DomainDataset) -> StagePartition:
    """Three-stage split of a labeled domain by cycle / total-life fraction."""
    if dataset.completeness != "complete":
        raise DataError(f"source segmentation needs complete data, "
                        f"dataset {dataset.name!r} is truncated")
    n = len(dataset.windows)
    stages = np.zeros(n, dtype=int)
    fractions = np.zeros(n)
    units, cycles = [], np.zeros(n, dtype=int)
    lo, hi = SOURCE_BOUNDARIES
    for i, w in enumerate(dataset.windows):
        total = dataset.unit_life.get(w.unit_id)
        if total is None:
            raise DataError(f"unit {w.unit_id} has unknown total life")
        f = w.end_cycle / total
        stages[i] = 1 if f < lo else (2 if f < hi else 3)
        fractions[i] = f
        units.append(w.unit_id)
        cycles[i] = w.end_cycle
    return StagePartition("source-3", stages, fractions, units, cycles)


def segment_target(dataset: DomainDataset, model) -> StagePartition:
    """Two-stage split of an unlabeled domain from per-unit pseudo-RUL.

    The model (any object with predict_rul(windows) -> array) supplies
    pseudo labels; the lifecycle fraction of a sample is
    1 - pseudo / max-over-unit(pseudo). Stage assignment thresholds the
    running maximum of the fraction along each unit so the stage index
    never decreases in cycle time even when pseudo labels are noisy.
    """
    n = len(dataset.windows)
    if n == 0:
        raise DataError(f"dataset {dataset.name!r} has no windows")
    pseudo = np.asarray(model.predict_rul(dataset.windows), dtype=np.float64)
    stages = np.zeros(n, dtype=int)
    fractions = np.zeros(n)
    units = [w.unit_id for w in dataset.windows]
    cycles = np.array([w.end_cycle for w in dataset.windows], dtype=int)
    for unit, items in dataset.windows_by_unit().items():
        idx = np.array([i for i, _ in items])
        y = pseudo[idx]
        y_max = y.max()
        if y_max <= 0:
            raise DataError(f"unit {unit}: pseudo-RUL maximum {y_max} <= 0, "
                            "cannot derive lifecycle fractions")
        frac = np.minimum(1.0 - y / y_max, 1.0)
        running = np.maximum.accumulate(frac)
        stages[idx] = np.where(running >= TARGET_BOUNDARY, 2, 1)
        fractions[idx] = frac
    return StagePartition("target-2", stages, fractions, units, cycles)


# -- health index ------------------------------------------------------------

@dataclass
class HealthIndexCurve:
    """Per-cycle health values in [0, 1] and the fitted sensor weights."""

    cycles: np.ndarray
    values: np.ndarray
    weights: np.ndarray  # one per channel plus intercept (last entry)
    residual: float


def hi_target(cycles, total_cycles: float) -> np.ndarray:
    """The fit target: health 1 at cycle 0 decaying linearly to 0 at failure."""
    return 1.0 - np.asarray(cycles, dtype=np.float64) / total_cycles


def apply_health_index(weights: np.ndarray, sensors: np.ndarray) -> np.ndarray:
    design = np.hstack([sensors, np.ones((sensors.shape[0], 1))])
    return np.clip(design @ weights, 0.0, 1.0)


def health_index(sensors: np.ndarray, labels) -> HealthIndexCurve:
    """Least-squares fit of a linear sensor combination to the health target.

    sensors is a complete (T, M) run-to-failure history; labels the matching
    uncapped RUL sequence ending at 0, from which cycles are reconstructed.
    """
    sensors = np.asarray(sensors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if sensors.shape[0] != labels.shape[0]:
        raise DataError(f"history length {sensors.shape[0]} does not match "
                        f"label length {labels.shape[0]}")
    total = sensors.shape[0]
    cycles = total - labels
    target = hi_target(cycles, total)
    design = np.hstack([sensors, np.ones((total, 1))])
    weights, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        warnings.warn(f"rank-deficient sensor matrix (rank {rank} of "
                      f"{design.shape[1]}), minimum-norm fit used")
    fitted = design @ weights
    residual = float(np.linalg.norm(fitted - target))
    return HealthIndexCurve(cycles=cycles, values=np.clip(fitted, 0.0, 1.0),
                            weights=weights, residual=residual)
