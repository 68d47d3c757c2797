"""Intent intensity as a diagonal Gaussian, and the gate it drives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import MLP, Linear, Module
from .tensor import Tensor

SQUASH_MODES = ("sigmoid", "clamp")


@dataclass
class IntentDistribution:
    mu: Tensor
    sigma: Tensor  # variance, strictly positive


class IntensityHeads(Module):
    """Two parameter-disjoint networks: one for the mean, one for the variance."""

    def __init__(self, d_in: int, d_z: int, hidden: Sequence[int], rng: np.random.Generator):
        self.f_mu = MLP(d_in, [*hidden, d_z], rng)
        self.f_sigma = MLP(d_in, [*hidden, d_z], rng)

    def __call__(self, x_u: Tensor) -> IntentDistribution:
        return intensity_heads(self, x_u)


def intensity_heads(heads: IntensityHeads, x_u: Tensor) -> IntentDistribution:
    return IntentDistribution(mu=heads.f_mu(x_u), sigma=T.softplus(heads.f_sigma(x_u)))


def sample_intensity(dist: IntentDistribution, rng: np.random.Generator | None,
                     mode: str = "train", eps: np.ndarray | None = None) -> Tensor:
    """Reparameterized draw mu + sqrt(sigma) * eps in train mode; the mean in infer mode."""
    if mode == "infer":
        return dist.mu
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if eps is None:
        eps = rng.standard_normal(dist.mu.shape)
    return dist.mu + T.sqrt(dist.sigma) * eps


def gate(z_raw: Tensor, h_tr: Tensor, h_ta: Tensor, squash: str = "sigmoid") -> Tensor:
    """(z * h_tr ; (1 - z) * h_ta) with z squashed into [0, 1]."""
    if z_raw.shape[-1] != h_tr.shape[-1] and z_raw.shape[-1] != 1:
        raise T.ContractError(
            f"gate width {z_raw.shape[-1]} does not match latent width {h_tr.shape[-1]}")
    if h_tr.shape != h_ta.shape:
        raise T.ContractError(f"latent shapes differ: {h_tr.shape} vs {h_ta.shape}")
    if squash == "sigmoid":
        z = T.sigmoid(z_raw)
    elif squash == "clamp":
        inside = (z_raw.data > 0) & (z_raw.data < 1)
        z = T.where(inside, z_raw, np.clip(z_raw.data, 0, 1))
    else:
        raise ValueError(f"squash must be one of {SQUASH_MODES}")
    return T.concat([z * h_tr, (1 - z) * h_ta], axis=-1)


class StaticIntensity(Module):
    """Deterministic scalar intensity head used in place of the Gaussian."""

    def __init__(self, d_in: int, rng: np.random.Generator):
        self.head = Linear(d_in, 1, rng)

    def __call__(self, x_u: Tensor) -> Tensor:
        return self.head(x_u)
