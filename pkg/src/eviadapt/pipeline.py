"""Experiment orchestration.

The full procedure: evidential pretraining of a source encoder and shared
predictor, pseudo-labeling of the unlabeled target domain, stage
segmentation of both domains, then adaptation of a cloned target encoder
against the frozen source encoder and predictor using the configured
alignment variant:

* S-Unc: stage-wise kernel alignment of the uncertainty triples
  (matched stages 1 and 2).
* G-Unc: the same alignment with a single global pool per domain.
* G-Fea: global feature MMD.

Checkpoints are deterministic versioned zip files embedding the config
snapshot; every random draw derives from (seed, role) or
(seed, role, iteration) so reruns are bit-identical.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import losses as L
from .data import DomainDataset, SyntheticConfig, generate_synthetic, truncate_target
from .encoder import EncoderConfig, RecurrentEncoder
from .errors import ConfigError, DataError, NumericalError
from .evidential import EvidentialHead, EvidentialOutput, QuantileSet, point_rul
from .evaluation import ResultRecord, emit_report, evaluate_model, save_records
from .losses import KernelSpec
from .optim import Adam
from .staging import StagePartition, segment_source, segment_target

VARIANTS = ("S-Unc", "G-Unc", "G-Fea")
CHECKPOINT_VERSION = 1

# rng stream tags so every phase draws from an independent deterministic stream
_INIT, _SHUFFLE, _DROPOUT, _BASELINE, _ADAPT = 101, 102, 103, 104, 211


@dataclass(frozen=True)
class EncoderSettings:
    layers: int = 1
    hidden_size: int = 24
    dropout: float = 0.1

    def build(self, input_channels: int) -> EncoderConfig:
        return EncoderConfig(input_channels=input_channels, layers=self.layers,
                             hidden_size=self.hidden_size, dropout=self.dropout)


@dataclass
class AdaptConfig:
    """Every tunable of the pipeline; mirrored one-to-one by the config file."""

    quantiles: tuple[float, ...] = (0.25, 0.75)
    lam: float = 0.01
    kernel: KernelSpec = field(default_factory=KernelSpec)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    batch_size: int = 128
    pretrain_lr: float = 1e-3
    adapt_lr: float = 5e-5
    pretrain_epochs: int = 30
    adapt_iterations: int = 300
    seed: int = 0
    runs: int = 5
    variant: str = "S-Unc"
    phi_parse: str = "literal"
    evidence_term: str = "derived"
    keep_fraction: float = 0.6
    adapt_dropout: bool = True
    include_source_rmse: bool = True
    last_window_eval: bool = False
    label_scale: float | str = "auto"
    window_length: int = 20
    stride: int = 1
    rul_cap: float | None = 130.0
    source: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(
        name="source", exponent=1.0, offset=0.0))
    target: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(
        name="target", exponent=2.0, offset=0.3))

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in self.quantiles)
        QuantileSet(self.quantiles)  # validates range and ordering
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.pretrain_lr <= 0 or self.adapt_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.pretrain_epochs < 1:
            raise ConfigError(f"pretrain_epochs must be >= 1, got {self.pretrain_epochs}")
        if self.adapt_iterations < 0:
            raise ConfigError(f"adapt_iterations must be >= 0, got {self.adapt_iterations}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.phi_parse not in L.PHI_PARSES:
            raise ConfigError(f"phi_parse must be one of {L.PHI_PARSES}")
        if self.evidence_term not in L.EVIDENCE_TERMS:
            raise ConfigError(f"evidence_term must be one of {L.EVIDENCE_TERMS}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.window_length < 1 or self.stride < 1:
            raise ConfigError("window_length and stride must be >= 1")
        if self.rul_cap is not None and self.rul_cap <= 0:
            raise ConfigError(f"rul_cap must be > 0 or null, got {self.rul_cap}")
        if isinstance(self.label_scale, str):
            if self.label_scale != "auto":
                raise ConfigError(f"label_scale must be a positive number or "
                                  f"'auto', got {self.label_scale!r}")
        elif not self.label_scale > 0:
            raise ConfigError(f"label_scale must be > 0, got {self.label_scale}")

    @property
    def quantile_set(self) -> QuantileSet:
        return QuantileSet(self.quantiles)

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.runs)]


# -- config file handling -------------------------------------------------------

def config_to_dict(cfg: AdaptConfig) -> dict:
    return {
        "quantiles": list(cfg.quantiles),
        "lam": cfg.lam,
        "kernel": {"kind": cfg.kernel.kind, "bandwidth": cfg.kernel.bandwidth},
        "encoder": {"layers": cfg.encoder.layers,
                    "hidden_size": cfg.encoder.hidden_size,
                    "dropout": cfg.encoder.dropout},
        "batch_size": cfg.batch_size,
        "pretrain_lr": cfg.pretrain_lr,
        "adapt_lr": cfg.adapt_lr,
        "pretrain_epochs": cfg.pretrain_epochs,
        "adapt_iterations": cfg.adapt_iterations,
        "seed": cfg.seed,
        "runs": cfg.runs,
        "variant": cfg.variant,
        "phi_parse": cfg.phi_parse,
        "evidence_term": cfg.evidence_term,
        "keep_fraction": cfg.keep_fraction,
        "label_scale": cfg.label_scale,
        "adapt_dropout": cfg.adapt_dropout,
        "include_source_rmse": cfg.include_source_rmse,
        "last_window_eval": cfg.last_window_eval,
        "window_length": cfg.window_length,
        "stride": cfg.stride,
        "rul_cap": cfg.rul_cap,
        "source": _synth_to_dict(cfg.source),
        "target": _synth_to_dict(cfg.target),
    }


def _synth_to_dict(sc: SyntheticConfig) -> dict:
    return {"name": sc.name, "units": sc.units, "channels": sc.channels,
            "life_min": sc.life_min, "life_max": sc.life_max,
            "exponent": sc.exponent, "offset": sc.offset, "noise": sc.noise}


_NESTED = {"kernel": ("kind", "bandwidth"),
           "encoder": ("layers", "hidden_size", "dropout"),
           "source": ("name", "units", "channels", "life_min", "life_max",
                      "exponent", "offset", "noise"),
           "target": ("name", "units", "channels", "life_min", "life_max",
                      "exponent", "offset", "noise")}


def config_from_dict(data: dict) -> AdaptConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    base = config_to_dict(AdaptConfig())
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a mapping, got {type(data).__name__}")
    for key, value in data.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            for sub in value:
                if sub not in _NESTED[key]:
                    raise ConfigError(f"unknown config key {key}.{sub!r}")
            base[key].update(value)
        else:
            base[key] = value
    return _build_config(base)


def _build_config(d: dict) -> AdaptConfig:
    bandwidth = d["kernel"]["bandwidth"]
    if not isinstance(bandwidth, str):
        bandwidth = float(bandwidth)
    try:
        return AdaptConfig(
            quantiles=tuple(d["quantiles"]),
            lam=float(d["lam"]),
            kernel=KernelSpec(kind=d["kernel"]["kind"], bandwidth=bandwidth),
            encoder=EncoderSettings(layers=int(d["encoder"]["layers"]),
                                    hidden_size=int(d["encoder"]["hidden_size"]),
                                    dropout=float(d["encoder"]["dropout"])),
            batch_size=int(d["batch_size"]),
            pretrain_lr=float(d["pretrain_lr"]),
            adapt_lr=float(d["adapt_lr"]),
            pretrain_epochs=int(d["pretrain_epochs"]),
            adapt_iterations=int(d["adapt_iterations"]),
            seed=int(d["seed"]),
            runs=int(d["runs"]),
            variant=str(d["variant"]),
            phi_parse=str(d["phi_parse"]),
            evidence_term=str(d["evidence_term"]),
            keep_fraction=float(d["keep_fraction"]),
            label_scale=(d["label_scale"] if isinstance(d["label_scale"], str)
                         else float(d["label_scale"])),
            adapt_dropout=bool(d["adapt_dropout"]),
            include_source_rmse=bool(d["include_source_rmse"]),
            last_window_eval=bool(d["last_window_eval"]),
            window_length=int(d["window_length"]),
            stride=int(d["stride"]),
            rul_cap=None if d["rul_cap"] is None else float(d["rul_cap"]),
            source=SyntheticConfig(**d["source"]),
            target=SyntheticConfig(**d["target"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path) -> AdaptConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(cfg: AdaptConfig, overrides: list[str]) -> AdaptConfig:
    """Apply key=value strings (dotted keys for nesting) on top of a config."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)


def resolve_config(path=None, overrides: list[str] | None = None) -> AdaptConfig:
    cfg = load_config(path) if path else AdaptConfig()
    return apply_overrides(cfg, overrides or [])


def save_config(cfg: AdaptConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
    return path


# -- model bundles ----------------------------------------------------------------

class PointHead:
    """Single linear output unit for the plain-regression baseline."""

    def __init__(self, feature_size: int, rng: np.random.Generator):
        from .autodiff import Tensor
        k = 1.0 / np.sqrt(feature_size)
        self.feature_size = feature_size
        self.weight = Tensor(rng.uniform(-k, k, size=(feature_size, 1)),
                             requires_grad=True)
        self.bias = Tensor(rng.uniform(-k, k, size=(1,)), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, features):
        return features @ self.weight + self.bias

    def state_dict(self):
        return {"weight": self.weight.data.copy(), "bias": self.bias.data.copy()}

    def load_state_dict(self, state):
        self.weight.data = np.array(state["weight"], dtype=np.float64)
        self.bias.data = np.array(state["bias"], dtype=np.float64)


class SourceModel:
    """Pretrained source encoder plus the shared evidential predictor.

    label_scale is the factor labels were divided by for training; point
    predictions are multiplied back up to cycle units.
    """

    def __init__(self, encoder: RecurrentEncoder, head: EvidentialHead,
                 label_scale: float = 1.0):
        self.encoder = encoder
        self.head = head
        self.quantiles = head.quantiles
        self.label_scale = float(label_scale)

    def evidential(self, windows) -> EvidentialOutput:
        feats = self.encoder.encode(windows, train=False)
        return self.head.forward(feats.features)

    def predict_rul(self, windows) -> np.ndarray:
        return point_rul(self.evidential(windows)) * self.label_scale

    def freeze(self) -> None:
        self.encoder.freeze()
        for p in self.head.parameters():
            p.requires_grad = False


class BaselineModel:
    """Encoder plus point head trained with mean squared error."""

    def __init__(self, encoder: RecurrentEncoder, head: PointHead,
                 label_scale: float = 1.0):
        self.encoder = encoder
        self.head = head
        self.label_scale = float(label_scale)

    def predict_rul(self, windows) -> np.ndarray:
        feats = self.encoder.encode(windows, train=False)
        return self.head.forward(feats.features).data.reshape(-1) * self.label_scale


def state_checksum(state: dict[str, np.ndarray]) -> str:
    import hashlib
    digest = hashlib.sha256()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(state[name]).tobytes())
    return digest.hexdigest()


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, config: AdaptConfig, arrays: dict[str, np.ndarray],
                    meta: dict) -> Path:
    """Write a deterministic versioned zip with config snapshot and arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": CHECKPOINT_VERSION,
                "meta": meta, "config": config_to_dict(config)}
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        def add(name: str, payload: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)

        add("manifest.json", json.dumps(manifest, sort_keys=True).encode())
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]))
            add(f"arrays/{name}.npy", buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version "
                            f"{manifest.get('format_version')} in {path}")
        arrays = {}
        for name in zf.namelist():
            if name.startswith("arrays/") and name.endswith(".npy"):
                arrays[name[len("arrays/"):-4]] = np.lib.format.read_array(
                    io.BytesIO(zf.read(name)))
    return manifest, arrays


def checkpoint_arrays(source_encoder: RecurrentEncoder,
                      target_encoder: RecurrentEncoder,
                      head: EvidentialHead) -> dict[str, np.ndarray]:
    arrays = {}
    for prefix, state in (("encoder_source", source_encoder.state_dict()),
                          ("encoder_target", target_encoder.state_dict()),
                          ("predictor", head.state_dict())):
        for name, value in state.items():
            arrays[f"{prefix}.{name}"] = value
    return arrays


def load_models(path) -> tuple[AdaptConfig, SourceModel, RecurrentEncoder, dict]:
    """Rebuild (config, source model, target encoder, meta) from a checkpoint."""
    manifest, arrays = load_checkpoint(path)
    cfg = config_from_dict(manifest["config"])
    grouped: dict[str, dict[str, np.ndarray]] = {}
    for name, value in arrays.items():
        prefix, _, rest = name.partition(".")
        grouped.setdefault(prefix, {})[rest] = value
    input_channels = grouped["encoder_source"]["layer0.w_x"].shape[0]
    enc_cfg = cfg.encoder.build(input_channels)
    rng = np.random.default_rng(0)
    source_encoder = RecurrentEncoder(enc_cfg, rng)
    source_encoder.load_state_dict(grouped["encoder_source"])
    target_encoder = RecurrentEncoder(enc_cfg, rng)
    target_encoder.load_state_dict(grouped["encoder_target"])
    head = EvidentialHead(cfg.encoder.hidden_size, cfg.quantile_set, rng)
    head.load_state_dict(grouped["predictor"])
    scale = manifest["meta"].get("label_scale", 1.0)
    return (cfg, SourceModel(source_encoder, head, scale), target_encoder,
            manifest["meta"])


# -- training ---------------------------------------------------------------------

def _resolve_label_scale(config: AdaptConfig, source: DomainDataset) -> float:
    if config.label_scale == "auto":
        top = float(source.labels().max())
        return top if top > 0 else 1.0
    return float(config.label_scale)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def pretrain(source: DomainDataset, config: AdaptConfig, seed: int | None = None
             ) -> tuple[SourceModel, list[float]]:
    """Train encoder and evidential head on the labeled source domain."""
    seed = config.seed if seed is None else seed
    init_rng = np.random.default_rng([seed, _INIT])
    shuffle_rng = np.random.default_rng([seed, _SHUFFLE])
    drop_rng = np.random.default_rng([seed, _DROPOUT])

    x = source.stacked()
    scale = _resolve_label_scale(config, source)
    y = source.labels() / scale
    encoder = RecurrentEncoder(config.encoder.build(source.n_channels), init_rng)
    head = EvidentialHead(config.encoder.hidden_size, config.quantile_set, init_rng)
    optimizer = Adam(encoder.parameters() + head.parameters(), lr=config.pretrain_lr)

    history: list[float] = []
    last_good = (encoder.state_dict(), head.state_dict())
    for epoch in range(config.pretrain_epochs):
        epoch_losses = []
        try:
            for batch in _epoch_batches(len(y), config.batch_size, shuffle_rng):
                feats = encoder.forward(x[batch], train=True, rng=drop_rng)
                output = head.forward(feats)
                loss = L.pretrain_loss(output, y[batch], lam=config.lam,
                                       evidence_term=config.evidence_term,
                                       phi_parse=config.phi_parse)
                if not np.isfinite(loss.data):
                    raise NumericalError(f"non-finite pretrain loss in epoch {epoch}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(float(loss.data))
        except NumericalError:
            encoder.load_state_dict(last_good[0])
            head.load_state_dict(last_good[1])
            raise
        history.append(float(np.mean(epoch_losses)))
        last_good = (encoder.state_dict(), head.state_dict())
    return SourceModel(encoder, head, scale), history


def pretrain_point_baseline(source: DomainDataset, config: AdaptConfig,
                            seed: int | None = None) -> tuple[BaselineModel, list[float]]:
    """Train the plain-regression baseline (mean-squared-error head)."""
    seed = config.seed if seed is None else seed
    init_rng = np.random.default_rng([seed, _BASELINE, _INIT])
    shuffle_rng = np.random.default_rng([seed, _BASELINE, _SHUFFLE])
    drop_rng = np.random.default_rng([seed, _BASELINE, _DROPOUT])

    x = source.stacked()
    scale = _resolve_label_scale(config, source)
    y = source.labels() / scale
    encoder = RecurrentEncoder(config.encoder.build(source.n_channels), init_rng)
    head = PointHead(config.encoder.hidden_size, init_rng)
    optimizer = Adam(encoder.parameters() + head.parameters(), lr=config.pretrain_lr)

    history: list[float] = []
    for epoch in range(config.pretrain_epochs):
        epoch_losses = []
        for batch in _epoch_batches(len(y), config.batch_size, shuffle_rng):
            feats = encoder.forward(x[batch], train=True, rng=drop_rng)
            loss = L.mse_loss(head.forward(feats), y[batch])
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite baseline loss in epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.data))
        history.append(float(np.mean(epoch_losses)))
    return BaselineModel(encoder, head, scale), history


@dataclass
class AdaptResult:
    target_encoder: RecurrentEncoder
    loss_history: list[float]
    source_partition: StagePartition | None
    target_partition: StagePartition | None


def _draw(pool: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    replace = len(pool) < size
    return rng.choice(pool, size=size, replace=replace)


def adapt(model: SourceModel, source: DomainDataset, target: DomainDataset,
          config: AdaptConfig, seed: int | None = None) -> AdaptResult:
    """Adapt a cloned target encoder under the frozen source model.

    Pseudo labels and stage partitions are computed once before the loop;
    each iteration draws fresh per-stage minibatches (reproducible from
    seed and iteration index) and minimizes the variant's alignment loss.
    """
    seed = config.seed if seed is None else seed
    model.freeze()
    target_encoder = model.encoder.clone()
    optimizer = Adam(target_encoder.parameters(), lr=config.adapt_lr)

    uses_stages = config.variant == "S-Unc"
    uses_features = config.variant == "G-Fea"

    source_partition = target_partition = None
    if uses_stages:
        source_partition = segment_source(source)
        target_partition = segment_target(target, model)
        src_pools = [source_partition.indices_for_stage(1),
                     source_partition.indices_for_stage(2)]
        tgt_pools = [target_partition.indices_for_stage(1),
                     target_partition.indices_for_stage(2)]
        for n, pool in enumerate(tgt_pools, start=1):
            if len(pool) == 0:
                raise DataError(
                    f"empty target stage pool {n}; partition counts: "
                    f"{target_partition.stage_counts()}")
        for n, pool in enumerate(src_pools, start=1):
            if len(pool) == 0:
                raise DataError(
                    f"empty source stage pool {n}; partition counts: "
                    f"{source_partition.stage_counts()}")
    else:
        src_pools = [np.arange(len(source.windows))]
        tgt_pools = [np.arange(len(target.windows))]
        if len(tgt_pools[0]) == 0:
            raise DataError("target domain has no windows")

    # constants under the frozen source model
    src_x = source.stacked()
    if uses_features:
        src_const = model.encoder.forward(src_x, train=False).data
    else:
        src_out = model.head.forward(model.encoder.forward(src_x, train=False))
        src_const = src_out.uncertainty_triples().data
    tgt_x = target.stacked()

    per_pool = config.batch_size // 2 if uses_stages else config.batch_size
    history: list[float] = []
    last_good = target_encoder.state_dict()
    for iteration in range(config.adapt_iterations):
        rng_it = np.random.default_rng([seed, _ADAPT, iteration])
        src_batches = [src_const[_draw(pool, per_pool, rng_it)] for pool in src_pools]
        tgt_idx = [_draw(pool, per_pool, rng_it) for pool in tgt_pools]
        batch = np.concatenate(tgt_idx)
        feats = target_encoder.forward(tgt_x[batch], train=config.adapt_dropout,
                                       rng=rng_it)
        if uses_features:
            loss = L.feature_mmd_loss(src_batches[0], feats, config.kernel)
        else:
            out = model.head.forward(feats)
            triples = out.uncertainty_triples()
            stage_triples = [triples[i * per_pool:(i + 1) * per_pool]
                             for i in range(len(tgt_pools))]
            loss = L.sea_loss(src_batches, stage_triples, config.kernel)
        if not np.isfinite(loss.data):
            target_encoder.load_state_dict(last_good)
            raise NumericalError(f"non-finite adaptation loss at iteration {iteration}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss.data))
        last_good = target_encoder.state_dict()
    return AdaptResult(target_encoder, history, source_partition, target_partition)


# -- experiment driver --------------------------------------------------------------

@dataclass
class ExperimentData:
    scenario: str
    source_train: DomainDataset
    target_train: DomainDataset
    target_test: DomainDataset


def synthetic_experiment_data(config: AdaptConfig, seed: int | None = None
                              ) -> ExperimentData:
    """Build the two-domain synthetic benchmark from the config's domain blocks."""
    seed = config.seed if seed is None else seed
    kw = dict(window_length=config.window_length, stride=config.stride)
    source_train = generate_synthetic(config.source, [seed, 11], **kw)
    target_train_full = generate_synthetic(config.target, [seed, 13], **kw)
    target_train = truncate_target(target_train_full, config.keep_fraction)
    target_test = generate_synthetic(
        replace(config.target, name=config.target.name + "-test"), [seed, 14],
        norm_stats=(target_train.norm_min, target_train.norm_max), **kw)
    return ExperimentData(
        scenario=f"{config.source.name}->{config.target.name}",
        source_train=source_train, target_train=target_train,
        target_test=target_test)


def _write_history(path: Path, history: list[float]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{repr(float(v))}\n")


def run_experiment(data: ExperimentData, config: AdaptConfig, output_dir,
                   variants: list[str] | None = None) -> list[ResultRecord]:
    """Pretrain, adapt, and evaluate over the configured seed list.

    Emits per-seed and aggregate metrics, loss curves, checkpoints, stage
    partitions, and the resolved config snapshot. On failure, whatever
    completed is persisted next to a failure marker before the error
    propagates.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "resolved_config.yaml")
    variants = list(variants) if variants is not None else [config.variant]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")

    last_window = config.last_window_eval
    names = ((["Source-RMSE"] if config.include_source_rmse else [])
             + ["Source-EVI"] + variants)
    metrics: dict[str, list[tuple[int, float, float]]] = {n: [] for n in names}

    try:
        for seed in config.seeds():
            model, pre_hist = pretrain(data.source_train, config, seed)
            _write_history(out / "loss_curves" / f"pretrain_seed{seed}.csv", pre_hist)
            save_checkpoint(
                out / "checkpoints" / f"pretrained_seed{seed}.ckpt", config,
                checkpoint_arrays(model.encoder, model.encoder, model.head),
                {"phase": "pretrained", "seed": seed,
                 "label_scale": model.label_scale,
                 "training_step": len(pre_hist)})

            if config.include_source_rmse:
                baseline, base_hist = pretrain_point_baseline(
                    data.source_train, config, seed)
                _write_history(out / "loss_curves" / f"baseline_seed{seed}.csv",
                               base_hist)
                res = evaluate_model(baseline.encoder, baseline.head,
                                     data.target_test,
                                     last_window_only=last_window,
                                     label_scale=baseline.label_scale)
                metrics["Source-RMSE"].append((seed, res.rmse, res.score))

            res = evaluate_model(model.encoder, model.head, data.target_test,
                                 quantiles=model.quantiles,
                                 last_window_only=last_window,
                                 label_scale=model.label_scale)
            metrics["Source-EVI"].append((seed, res.rmse, res.score))

            for variant in variants:
                cfg_v = replace(config, variant=variant)
                result = adapt(model, data.source_train, data.target_train,
                               cfg_v, seed)
                _write_history(
                    out / "loss_curves" / f"adapt_{variant}_seed{seed}.csv",
                    result.loss_history)
                if result.source_partition is not None:
                    result.source_partition.export(
                        out / "partitions" / f"source_seed{seed}.csv")
                    result.target_partition.export(
                        out / "partitions" / f"target_seed{seed}.csv")
                save_checkpoint(
                    out / "checkpoints" / f"adapted_{variant}_seed{seed}.ckpt",
                    cfg_v,
                    checkpoint_arrays(model.encoder, result.target_encoder,
                                      model.head),
                    {"phase": "adapted", "variant": variant, "seed": seed,
                     "label_scale": model.label_scale,
                     "training_step": len(result.loss_history)})
                res = evaluate_model(result.target_encoder, model.head,
                                     data.target_test,
                                     quantiles=model.quantiles,
                                     last_window_only=last_window,
                                     label_scale=model.label_scale)
                metrics[variant].append((seed, res.rmse, res.score))
    except Exception as exc:
        records = _records_from_metrics(data.scenario, metrics)
        if records:
            save_records(records, out / "aggregate.json")
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise

    records = _records_from_metrics(data.scenario, metrics)
    save_records(records, out / "aggregate.json")
    emit_report(records, out)
    return records


def _records_from_metrics(scenario: str, metrics: dict) -> list[ResultRecord]:
    records = []
    for name, values in metrics.items():
        if not values:
            continue
        records.append(ResultRecord(
            scenario=scenario, variant=name,
            seeds=[v[0] for v in values],
            rmse_values=[v[1] for v in values],
            score_values=[v[2] for v in values]))
    return records
