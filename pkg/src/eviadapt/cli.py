"""Command-line interface.

Subcommands: ingest, generate, pretrain, adapt, evaluate, sweep, ablate.
A staged experiment lives in one directory: `generate` (or `ingest`)
populates <dir>/data, `pretrain` and `adapt` write <dir>/checkpoints and
loss curves, `evaluate` writes the results files. `ablate` and `sweep`
run the full pipeline in one shot.

Configuration comes from defaults, then an optional YAML file, then
overrides. Every config field is also exposed as a long flag of the same
name (nested fields via --set section.key=value). The fully-resolved
config is written next to each command's outputs.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline as pl
from .data import load_cmapss, load_dataset, truncate_target
from .errors import ConfigError, DataError, EviAdaptError, NumericalError
from .evaluation import emit_report, save_records
from .pipeline import AdaptConfig

DEFAULT_QUANTILE_SETS = "0.25,0.5;0.5,0.75;0.25,0.75"

_FLAG_FIELDS = [k for k in pl.config_to_dict(AdaptConfig())
                if k not in ("kernel", "encoder", "source", "target")]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1
        raise ConfigError(f"{message}\n{self.format_usage()}")


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="YAML config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE",
                     help="override a config field (dotted keys for nesting)")
    for name in _FLAG_FIELDS:
        sub.add_argument(f"--{name}", dest=f"field_{name}", metavar="VALUE")


def _resolve_dir(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get("EVIADAPT_OUTPUT_ROOT", ".")
    return Path(root) / p


def _resolve(args) -> AdaptConfig:
    overrides = list(args.overrides)
    for name in _FLAG_FIELDS:
        value = getattr(args, f"field_{name}", None)
        if value is not None:
            overrides.append(f"{name}={value}")
    config_path = args.config
    if config_path is None:
        default = _resolve_dir(args.dir) / "resolved_config.yaml" if hasattr(args, "dir") else None
        if default is not None and default.exists():
            config_path = default
    return pl.resolve_config(config_path, overrides)


def _load_data_dir(exp_dir: Path) -> pl.ExperimentData:
    data_dir = exp_dir / "data"
    required = ["source_train.csv", "target_train.csv", "target_test.csv"]
    for name in required:
        if not (data_dir / name).exists():
            raise DataError(f"missing dataset file {data_dir / name}; "
                            "run `generate` or `ingest` first")
    source_train = load_dataset(data_dir / "source_train.csv")
    target_train = load_dataset(data_dir / "target_train.csv")
    target_test = load_dataset(data_dir / "target_test.csv")
    return pl.ExperimentData(
        scenario=f"{source_train.name}->{target_test.name}",
        source_train=source_train, target_train=target_train,
        target_test=target_test)


# -- subcommands --------------------------------------------------------------

def _cmd_generate(args) -> int:
    cfg = _resolve(args)
    out = _resolve_dir(args.out)
    data = pl.synthetic_experiment_data(cfg)
    from .data import export_dataset
    export_dataset(data.source_train, out / "data" / "source_train.csv")
    export_dataset(data.target_train, out / "data" / "target_train.csv")
    export_dataset(data.target_test, out / "data" / "target_test.csv")
    pl.save_config(cfg, out / "resolved_config.yaml")
    print(f"generated synthetic domains under {out / 'data'}")
    return 0


def _cmd_ingest(args) -> int:
    cfg = _resolve(args)
    out = _resolve_dir(args.out)
    train, test = load_cmapss(args.train, args.test, args.rul,
                              window_length=cfg.window_length,
                              stride=cfg.stride, rul_cap=cfg.rul_cap,
                              name=args.name)
    from .data import export_dataset
    if args.role == "target":
        train = truncate_target(train, cfg.keep_fraction)
    export_dataset(train, out / "data" / f"{args.role}_train.csv")
    export_dataset(test, out / "data" / f"{args.role}_test.csv")
    pl.save_config(cfg, out / "resolved_config.yaml")
    print(f"ingested {args.name} as {args.role} under {out / 'data'} "
          f"({len(train.windows)} train windows, {len(test.windows)} test windows)")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    exp = _resolve_dir(args.dir)
    data = _load_data_dir(exp)
    for seed in cfg.seeds():
        model, history = pl.pretrain(data.source_train, cfg, seed)
        pl.save_checkpoint(
            exp / "checkpoints" / f"pretrained_seed{seed}.ckpt", cfg,
            pl.checkpoint_arrays(model.encoder, model.encoder, model.head),
            {"phase": "pretrained", "seed": seed, "training_step": len(history),
             "label_scale": model.label_scale})
        pl._write_history(exp / "loss_curves" / f"pretrain_seed{seed}.csv", history)
        if cfg.include_source_rmse:
            baseline, base_hist = pl.pretrain_point_baseline(data.source_train, cfg, seed)
            arrays = {f"encoder.{k}": v for k, v in baseline.encoder.state_dict().items()}
            arrays.update({f"predictor.{k}": v for k, v in baseline.head.state_dict().items()})
            pl.save_checkpoint(
                exp / "checkpoints" / f"baseline_seed{seed}.ckpt", cfg, arrays,
                {"phase": "baseline", "seed": seed, "training_step": len(base_hist),
                 "label_scale": baseline.label_scale})
            pl._write_history(exp / "loss_curves" / f"baseline_seed{seed}.csv", base_hist)
        print(f"pretrained seed {seed}: final loss {history[-1]:.4f}")
    pl.save_config(cfg, exp / "resolved_config.yaml")
    return 0


def _cmd_adapt(args) -> int:
    cfg = _resolve(args)
    exp = _resolve_dir(args.dir)
    data = _load_data_dir(exp)
    for seed in cfg.seeds():
        ckpt = exp / "checkpoints" / f"pretrained_seed{seed}.ckpt"
        _, model, _, _ = pl.load_models(ckpt)
        result = pl.adapt(model, data.source_train, data.target_train, cfg, seed)
        pl.save_checkpoint(
            exp / "checkpoints" / f"adapted_{cfg.variant}_seed{seed}.ckpt", cfg,
            pl.checkpoint_arrays(model.encoder, result.target_encoder, model.head),
            {"phase": "adapted", "variant": cfg.variant, "seed": seed,
             "training_step": len(result.loss_history),
             "label_scale": model.label_scale})
        pl._write_history(
            exp / "loss_curves" / f"adapt_{cfg.variant}_seed{seed}.csv",
            result.loss_history)
        if result.target_partition is not None:
            result.source_partition.export(exp / "partitions" / f"source_seed{seed}.csv")
            result.target_partition.export(exp / "partitions" / f"target_seed{seed}.csv")
        final = result.loss_history[-1] if result.loss_history else float("nan")
        print(f"adapted seed {seed} ({cfg.variant}): final loss {final:.4f}")
    pl.save_config(cfg, exp / "resolved_config.yaml")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluation import evaluate_model

    cfg = _resolve(args)
    exp = _resolve_dir(args.dir)
    data = _load_data_dir(exp)
    metrics: dict[str, list[tuple[int, float, float]]] = {}
    for seed in cfg.seeds():
        pre = exp / "checkpoints" / f"pretrained_seed{seed}.ckpt"
        if not pre.exists():
            raise DataError(f"missing checkpoint {pre}; run `pretrain` first")
        _, model, _, _ = pl.load_models(pre)
        base_path = exp / "checkpoints" / f"baseline_seed{seed}.ckpt"
        if base_path.exists():
            baseline = _load_baseline(base_path, cfg, data.source_train.n_channels)
            res = evaluate_model(baseline.encoder, baseline.head, data.target_test,
                                 last_window_only=cfg.last_window_eval,
                                 label_scale=baseline.label_scale)
            metrics.setdefault("Source-RMSE", []).append((seed, res.rmse, res.score))
        res = evaluate_model(model.encoder, model.head, data.target_test,
                             quantiles=model.quantiles,
                             last_window_only=cfg.last_window_eval,
                             label_scale=model.label_scale)
        metrics.setdefault("Source-EVI", []).append((seed, res.rmse, res.score))
        for variant in pl.VARIANTS:
            path = exp / "checkpoints" / f"adapted_{variant}_seed{seed}.ckpt"
            if not path.exists():
                continue
            _, model_v, target_encoder, _ = pl.load_models(path)
            res = evaluate_model(target_encoder, model_v.head, data.target_test,
                                 quantiles=model_v.quantiles,
                                 last_window_only=cfg.last_window_eval,
                                 label_scale=model_v.label_scale)
            metrics.setdefault(variant, []).append((seed, res.rmse, res.score))
    records = pl._records_from_metrics(data.scenario, metrics)
    if not records:
        raise DataError("nothing to evaluate: no checkpoints found")
    save_records(records, exp / "aggregate.json")
    emit_report(records, exp)
    pl.save_config(cfg, exp / "resolved_config.yaml")
    for rec in records:
        print(f"{rec.scenario} {rec.variant}: mean rmse {rec.mean_rmse:.3f}, "
              f"mean score {rec.mean_score:.1f}")
    return 0


def _load_baseline(path, cfg: AdaptConfig, input_channels: int) -> pl.BaselineModel:
    import numpy as np

    manifest, arrays = pl.load_checkpoint(path)
    rng = np.random.default_rng(0)
    encoder = pl.RecurrentEncoder(cfg.encoder.build(input_channels), rng)
    encoder.load_state_dict({k[len("encoder."):]: v for k, v in arrays.items()
                             if k.startswith("encoder.")})
    head = pl.PointHead(cfg.encoder.hidden_size, rng)
    head.load_state_dict({k[len("predictor."):]: v for k, v in arrays.items()
                          if k.startswith("predictor.")})
    return pl.BaselineModel(encoder, head, manifest["meta"].get("label_scale", 1.0))


def _cmd_ablate(args) -> int:
    cfg = _resolve(args)
    out = _resolve_dir(args.out)
    data = pl.synthetic_experiment_data(cfg) if args.data_dir is None \
        else _load_data_dir(_resolve_dir(args.data_dir))
    records = pl.run_experiment(data, cfg, out, variants=list(pl.VARIANTS))
    for rec in records:
        print(f"{rec.variant}: mean rmse {rec.mean_rmse:.3f}, "
              f"mean score {rec.mean_score:.1f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolve(args)
    out = _resolve_dir(args.out)
    all_records = []
    for chunk in args.quantile_sets.split(";"):
        quantiles = tuple(float(v) for v in chunk.split(",") if v)
        cfg_q = replace(cfg, quantiles=quantiles)
        tag = "qs_" + "_".join(str(q) for q in quantiles)
        data = pl.synthetic_experiment_data(cfg_q) if args.data_dir is None \
            else _load_data_dir(_resolve_dir(args.data_dir))
        records = pl.run_experiment(data, cfg_q, out / tag)
        for rec in records:
            rec.config_ref = tag
        all_records.extend(records)
        print(f"quantiles {quantiles}: done")
    save_records(all_records, out / "sweep_records.json")
    pl.save_config(cfg, out / "resolved_config.yaml")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="eviadapt",
                     description="Evidential domain adaptation for RUL prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parser_class=_Parser,
                       help="generate the synthetic two-domain benchmark")
    p.add_argument("--out", required=True, help="experiment directory")
    _add_config_args(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("ingest", parser_class=_Parser,
                       help="ingest a turbofan-format dataset")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--rul", required=True)
    p.add_argument("--role", choices=["source", "target"], required=True)
    p.add_argument("--name", default="cmapss")
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=_cmd_ingest)

    for name, fn, help_text in [
            ("pretrain", _cmd_pretrain, "pretrain the source model per seed"),
            ("adapt", _cmd_adapt, "adapt the target encoder per seed"),
            ("evaluate", _cmd_evaluate, "evaluate checkpoints on the target test set")]:
        p = sub.add_parser(name, parser_class=_Parser, help=help_text)
        p.add_argument("--dir", required=True, help="experiment directory")
        _add_config_args(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("ablate", parser_class=_Parser,
                       help="run all alignment variants from one pretraining")
    p.add_argument("--out", required=True)
    p.add_argument("--data-dir", default=None,
                   help="existing experiment dir with data/ (default: synthetic)")
    _add_config_args(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", parser_class=_Parser,
                       help="sweep quantile sets")
    p.add_argument("--out", required=True)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--quantile-sets", default=DEFAULT_QUANTILE_SETS,
                   help="semicolon-separated comma lists")
    _add_config_args(p)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error (usage): {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return 3
    except EviAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
