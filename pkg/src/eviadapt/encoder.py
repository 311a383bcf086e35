"""Stacked LSTM sequence encoder.

Consumes a batch of sensor windows shaped (batch, channels, steps) and
returns the final-step hidden state of the top layer as the feature vector.
Dropout is applied to the hidden sequences between layers, only in train
mode, and never after the top layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int
    layers: int = 1
    hidden_size: int = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.input_channels < 1:
            raise ConfigError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class FeatureBatch:
    """Encoded features (batch, hidden) plus per-row (unit, end_cycle) provenance."""

    features: Tensor
    provenance: list[tuple[object, int]]


class RecurrentEncoder:
    """LSTM cells with uniform [-1/sqrt(H), 1/sqrt(H)] initialization."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        k = 1.0 / np.sqrt(config.hidden_size)
        for layer in range(config.layers):
            in_size = config.input_channels if layer == 0 else config.hidden_size
            gate_width = 4 * config.hidden_size
            self.params[f"layer{layer}.w_x"] = Tensor(
                rng.uniform(-k, k, size=(in_size, gate_width)), requires_grad=True)
            self.params[f"layer{layer}.w_h"] = Tensor(
                rng.uniform(-k, k, size=(config.hidden_size, gate_width)),
                requires_grad=True)
            self.params[f"layer{layer}.b"] = Tensor(
                rng.uniform(-k, k, size=(gate_width,)), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def clone(self) -> "RecurrentEncoder":
        dup = object.__new__(RecurrentEncoder)
        dup.config = self.config
        dup.params = {name: Tensor(p.data.copy(), requires_grad=True)
                      for name, p in self.params.items()}
        return dup

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Run the stacked cells over x (batch, channels, steps)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.config.input_channels:
            raise ValueError(
                f"expected input (batch, {self.config.input_channels}, steps), "
                f"got {x.shape}")
        batch, _, steps = x.shape
        h_size = self.config.hidden_size
        drop = self.config.dropout
        if train and drop > 0.0 and rng is None:
            raise ConfigError("train-mode dropout needs an rng")

        sequence = [Tensor(x[:, :, t]) for t in range(steps)]
        for layer in range(self.config.layers):
            w_x = self.params[f"layer{layer}.w_x"]
            w_h = self.params[f"layer{layer}.w_h"]
            b = self.params[f"layer{layer}.b"]
            h = Tensor(np.zeros((batch, h_size)))
            c = Tensor(np.zeros((batch, h_size)))
            outputs = []
            for x_t in sequence:
                gates = x_t @ w_x + h @ w_h + b
                i = ad.sigmoid(gates[:, 0 * h_size:1 * h_size])
                f = ad.sigmoid(gates[:, 1 * h_size:2 * h_size])
                g = ad.tanh(gates[:, 2 * h_size:3 * h_size])
                o = ad.sigmoid(gates[:, 3 * h_size:4 * h_size])
                c = f * c + i * g
                h = o * ad.tanh(c)
                outputs.append(h)
            last_layer = layer == self.config.layers - 1
            if train and drop > 0.0 and not last_layer:
                keep = 1.0 - drop
                outputs = [
                    out * Tensor((rng.uniform(size=(batch, h_size)) >= drop) / keep)
                    for out in outputs
                ]
            sequence = outputs
        return sequence[-1]

    def encode(self, windows, train: bool = False,
               rng: np.random.Generator | None = None) -> FeatureBatch:
        """Encode TimeWindow objects (or a raw (B, M, L) array) into features."""
        if isinstance(windows, np.ndarray):
            x = windows
            provenance = [(None, -1)] * x.shape[0]
        else:
            x = np.stack([w.sensors for w in windows])
            provenance = [(w.unit_id, w.end_cycle) for w in windows]
        bad = ~np.isfinite(x).reshape(x.shape[0], -1).all(axis=1)
        if bad.any():
            row = int(np.argmax(bad))
            unit, cycle = provenance[row]
            raise DataError(f"non-finite sensor values in window "
                            f"(unit={unit}, end_cycle={cycle})")
        features = self.forward(x, train=train, rng=rng)
        return FeatureBatch(features, provenance)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.params[name].data = np.array(state[name], dtype=np.float64)
