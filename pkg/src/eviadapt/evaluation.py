"""Metrics, result aggregation, and report emission.

RMSE treats early and late errors alike; the Score metric penalizes late
RUL predictions (estimate above truth) more heavily, with exponential
constants 13 for early and 10 for late errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .evidential import EvidentialHead, point_rul


def rmse(predictions, labels) -> float:
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    true = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions vs "
                         f"{true.shape[0]} labels")
    if pred.size == 0:
        raise ValueError("rmse needs at least one sample")
    return float(np.sqrt(np.mean((true - pred) ** 2)))


def score(predictions, labels) -> float:
    """Asymmetric exponential prognostics penalty, summed over samples."""
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    true = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions vs "
                         f"{true.shape[0]} labels")
    err = pred - true
    early = np.expm1(-err / 13.0)
    late = np.expm1(err / 10.0)
    return float(np.sum(np.where(err < 0, early, late)))


@dataclass
class EvalResult:
    rmse: float
    score: float
    predictions: list  # (unit, end_cycle, estimate, truth)


def evaluate_model(encoder, predictor, dataset, quantiles=None,
                   last_window_only: bool = False,
                   label_scale: float = 1.0) -> EvalResult:
    """Eval-mode metrics of an encoder+predictor pair on a labeled dataset.

    With last_window_only=True only each unit's last available window is
    scored (the turbofan test-set convention of one prediction per unit);
    otherwise every window is scored. label_scale converts the predictor's
    output back to cycle units when training used scaled labels.
    """
    windows = dataset.windows
    if last_window_only:
        windows = [items[-1][1] for items in dataset.windows_by_unit().values()]
    if not windows:
        raise DataError(f"dataset {dataset.name!r} has no windows to evaluate")
    labels = []
    for w in windows:
        if w.rul_label is None:
            raise DataError(f"evaluation needs labels; unit {w.unit_id} "
                            f"window at cycle {w.end_cycle} is unlabeled")
        labels.append(w.rul_label)
    labels = np.asarray(labels)

    feats = encoder.encode(windows, train=False)
    output = predictor.forward(feats.features)
    if isinstance(predictor, EvidentialHead):
        estimates = point_rul(output)
    else:
        estimates = output.data.reshape(-1)
    estimates = estimates * float(label_scale)
    records = [(w.unit_id, w.end_cycle, float(e), float(y))
               for w, e, y in zip(windows, estimates, labels)]
    return EvalResult(rmse(estimates, labels), score(estimates, labels), records)


# -- result records -----------------------------------------------------------

@dataclass
class ResultRecord:
    """Per-seed metrics for one (scenario, variant) pair plus aggregates."""

    scenario: str
    variant: str
    seeds: list[int]
    rmse_values: list[float]
    score_values: list[float]
    config_ref: str = ""
    mean_rmse: float = field(init=False)
    mean_score: float = field(init=False)

    def __post_init__(self):
        if not (len(self.seeds) == len(self.rmse_values) == len(self.score_values)):
            raise ValueError("seed and metric lists must have equal lengths")
        self.mean_rmse = float(np.mean(self.rmse_values))
        self.mean_score = float(np.mean(self.score_values))

    @property
    def median_rmse(self) -> float:
        return float(np.median(self.rmse_values))

    @property
    def median_score(self) -> float:
        return float(np.median(self.score_values))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "variant": self.variant,
            "seeds": list(self.seeds),
            "rmse": list(self.rmse_values), "score": list(self.score_values),
            "mean_rmse": self.mean_rmse, "mean_score": self.mean_score,
            "median_rmse": self.median_rmse, "median_score": self.median_score,
            "config_ref": self.config_ref,
        }

    @staticmethod
    def from_dict(d: dict) -> "ResultRecord":
        return ResultRecord(scenario=d["scenario"], variant=d["variant"],
                            seeds=list(d["seeds"]), rmse_values=list(d["rmse"]),
                            score_values=list(d["score"]),
                            config_ref=d.get("config_ref", ""))


def emit_report(records: list[ResultRecord], output_dir) -> list[Path]:
    """Write the results table, a comparison table, and per-scenario plots."""
    if not records:
        raise ValueError("emit_report needs at least one record")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc}") from exc

    paths = [_write_results_csv(records, out / "results.csv"),
             _write_comparison(records, out / "comparison.txt")]
    paths.extend(_write_plots(records, out))
    return paths


def _write_results_csv(records, path: Path) -> Path:
    with open(path, "w") as fh:
        fh.write("scenario,variant,seed,rmse,score\n")
        for rec in records:
            for seed, r, s in zip(rec.seeds, rec.rmse_values, rec.score_values):
                fh.write(f"{rec.scenario},{rec.variant},{seed},{repr(float(r))},"
                         f"{repr(float(s))}\n")
    return path


def _write_comparison(records, path: Path) -> Path:
    scenarios = list(dict.fromkeys(r.scenario for r in records))
    variants = list(dict.fromkeys(r.variant for r in records))
    by_key = {(r.scenario, r.variant): r for r in records}
    show_variant = any(v for v in variants)

    def fmt(rec: ResultRecord | None) -> str:
        if rec is None:
            return "-"
        return f"{rec.mean_rmse:.2f}/{rec.mean_score:.1f}"

    header = (["variant"] if show_variant else []) + scenarios + ["Avg."]
    rows = []
    for variant in variants:
        cells = [by_key.get((sc, variant)) for sc in scenarios]
        present = [c for c in cells if c is not None]
        avg_rmse = np.mean([c.mean_rmse for c in present])
        avg_score = np.mean([c.mean_score for c in present])
        row = ([variant] if show_variant else []) + [fmt(c) for c in cells]
        row.append(f"{avg_rmse:.2f}/{avg_score:.1f}")
        rows.append(row)
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    with open(path, "w") as fh:
        fh.write("mean rmse/score per scenario\n")
        fh.write("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip() + "\n")
        for row in rows:
            fh.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
    return path


def _write_plots(records, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    scenarios = list(dict.fromkeys(r.scenario for r in records))
    for scenario in scenarios:
        recs = [r for r in records if r.scenario == scenario]
        labels = [r.variant or "(default)" for r in recs]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].bar(labels, [r.mean_rmse for r in recs], color="#4878a8")
        axes[0].set_ylabel("RMSE")
        axes[1].bar(labels, [r.mean_score for r in recs], color="#a85448")
        axes[1].set_ylabel("Score")
        for ax in axes:
            ax.tick_params(axis="x", rotation=30)
        fig.suptitle(scenario)
        fig.tight_layout()
        safe = scenario.replace("/", "_").replace(" ", "_").replace(">", "")
        target = out / f"metrics_{safe}.png"
        fig.savefig(target, dpi=110)
        plt.close(fig)
        paths.append(target)
    return paths


def save_records(records: list[ResultRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"records": [r.to_dict() for r in records]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_records(path) -> list[ResultRecord]:
    payload = json.loads(Path(path).read_text())
    return [ResultRecord.from_dict(d) for d in payload["records"]]
