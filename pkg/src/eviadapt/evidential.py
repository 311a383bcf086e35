"""Per-quantile Normal-Inverse-Gamma predictor head.

The head maps an encoded feature vector to one (gamma, nu, alpha, beta)
tuple per configured quantile. nu and beta go through softplus, alpha
through softplus plus one, so nu > 0, beta > 0, alpha > 1 hold by
construction. gamma is linear. The point RUL estimate is the mean of
gamma across the quantile set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


def quantile_constants(q: float) -> tuple[float, float]:
    """Location/scale constants (tau, omega) of the quantile q.

    tau = (1 - 2q) / (q (1 - q)),  omega = 2 / (q (1 - q)).
    """
    if not 0.0 < q < 1.0:
        raise ConfigError(f"quantile must lie in (0, 1), got {q}")
    denom = q * (1.0 - q)
    return (1.0 - 2.0 * q) / denom, 2.0 / denom


@dataclass(frozen=True)
class QuantileSet:
    """A strictly increasing set of quantile levels, each in (0, 1)."""

    quantiles: tuple[float, ...] = (0.25, 0.75)

    def __post_init__(self):
        qs = tuple(float(q) for q in self.quantiles)
        if not qs:
            raise ConfigError("quantile set must be non-empty")
        for q in qs:
            if not 0.0 < q < 1.0:
                raise ConfigError(f"quantile must lie in (0, 1), got {q}")
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise ConfigError(f"quantiles must be strictly increasing, got {qs}")
        object.__setattr__(self, "quantiles", qs)

    def __len__(self) -> int:
        return len(self.quantiles)

    def tau(self) -> np.ndarray:
        return np.array([quantile_constants(q)[0] for q in self.quantiles])

    def omega(self) -> np.ndarray:
        return np.array([quantile_constants(q)[1] for q in self.quantiles])


@dataclass
class EvidentialOutput:
    """Per-quantile NIG parameters for a batch, shape (batch, n_quantiles) each."""

    gamma: Tensor
    nu: Tensor
    alpha: Tensor
    beta: Tensor
    quantiles: QuantileSet = field(default_factory=QuantileSet)

    def z_mean(self) -> Tensor:
        """Mean of the exponential mixing variable, beta / (alpha - 1)."""
        return self.beta / (self.alpha - 1.0)

    def uncertainty_triples(self) -> Tensor:
        """Concatenate (nu, alpha, beta) per quantile into rows of width 3K.

        Column layout is [nu_q1, alpha_q1, beta_q1, nu_q2, ...]; gamma is the
        point estimate and is deliberately excluded.
        """
        cols = []
        for k in range(len(self.quantiles)):
            cols.extend([self.nu[:, k:k + 1], self.alpha[:, k:k + 1],
                         self.beta[:, k:k + 1]])
        return ad.concatenate(cols, axis=1)

    def detach(self) -> "EvidentialOutput":
        return EvidentialOutput(self.gamma.detach(), self.nu.detach(),
                                self.alpha.detach(), self.beta.detach(),
                                self.quantiles)


def point_rul(output: EvidentialOutput) -> np.ndarray:
    """Per-row RUL estimate: arithmetic mean of gamma over the quantile set."""
    return output.gamma.data.mean(axis=1)


class EvidentialHead:
    """Single linear layer from features to 4 * n_quantiles raw outputs."""

    def __init__(self, feature_size: int, quantiles: QuantileSet,
                 rng: np.random.Generator):
        self.feature_size = feature_size
        self.quantiles = quantiles
        k = 1.0 / np.sqrt(feature_size)
        width = 4 * len(quantiles)
        self.weight = Tensor(rng.uniform(-k, k, size=(feature_size, width)),
                             requires_grad=True)
        self.bias = Tensor(rng.uniform(-k, k, size=(width,)), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def forward(self, features: Tensor) -> EvidentialOutput:
        if features.shape[1] != self.feature_size:
            raise ValueError(
                f"feature width {features.shape[1]} does not match head "
                f"input width {self.feature_size}")
        raw = features @ self.weight + self.bias
        n = len(self.quantiles)
        gamma = raw[:, 0 * n:1 * n]
        nu = ad.softplus(raw[:, 1 * n:2 * n])
        alpha = ad.softplus(raw[:, 2 * n:3 * n]) + 1.0
        beta = ad.softplus(raw[:, 3 * n:4 * n])
        return EvidentialOutput(gamma, nu, alpha, beta, self.quantiles)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight.data.copy(), "bias": self.bias.data.copy()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.weight.data = np.array(state["weight"], dtype=np.float64)
        self.bias.data = np.array(state["bias"], dtype=np.float64)
