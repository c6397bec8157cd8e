"""Normalization variants applied to rectified attention outputs.

Three parameterized norms over the last axis, built from tensor primitives
so their adjoints come for free:

  rmsnorm(z)        = z / sqrt(mean(z^2) + eps) * gain
  layernorm(z)      = (z - mean(z)) / sqrt(var(z) + eps) * gain + bias
  gated_rmsnorm(z)  = sigmoid(gate * z) * rmsnorm(z)

The gain can be initialized to ones or to a scaled-uniform draw on
[-sqrt(3/fan), +sqrt(3/fan)].  ``gain_fan`` exists because in multi-head use
the gain vector spans the concatenated head width while the draw bound is
quoted per head; keeping both explicit prevents conflating the two widths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, reduce_mean, sigmoid, sqrt

NORM_KINDS = ("none", "rmsnorm", "layernorm", "gated_rmsnorm")
INIT_KINDS = ("ones", "xavier_uniform_gain")


@dataclass(frozen=True)
class NormConfig:
    kind: str
    width: int
    epsilon: float = 1e-8
    init: str = "ones"
    gain_fan: int | None = None  # fan for the uniform bound; defaults to width

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; choose from {NORM_KINDS}")
        if self.init not in INIT_KINDS:
            raise ValueError(f"unknown norm init {self.init!r}; choose from {INIT_KINDS}")
        if self.kind != "none" and self.width < 1:
            raise ValueError(f"norm width must be positive, got {self.width}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.init == "xavier_uniform_gain" and self.kind not in ("rmsnorm", "gated_rmsnorm"):
            raise ValueError("xavier_uniform_gain is only meaningful for rmsnorm/gated_rmsnorm")
        if self.gain_fan is not None and self.gain_fan < 1:
            raise ValueError(f"gain_fan must be positive, got {self.gain_fan}")

    @property
    def fan(self) -> int:
        return self.width if self.gain_fan is None else self.gain_fan


@dataclass
class NormParams:
    gain: Tensor | None = None
    gate: Tensor | None = None
    bias: Tensor | None = None

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for field in ("gain", "gate", "bias"):
            t = getattr(self, field)
            if t is not None:
                out[f"{prefix}.{field}"] = t
        return out


def init_gain(config: NormConfig, rng: np.random.Generator) -> NormParams:
    """Build trainable parameters for ``config``; gate and bias start at 0."""
    if config.kind == "none":
        return NormParams()
    if config.init == "ones":
        gain_data = np.ones(config.width)
    else:
        bound = np.sqrt(3.0 / config.fan)
        gain_data = rng.uniform(-bound, bound, size=config.width)
    gain = Tensor(gain_data, requires_grad=True)
    if config.kind == "layernorm":
        return NormParams(gain=gain, bias=Tensor(np.zeros(config.width), requires_grad=True))
    if config.kind == "gated_rmsnorm":
        return NormParams(gain=gain, gate=Tensor(np.zeros(config.width), requires_grad=True))
    return NormParams(gain=gain)


def rmsnorm(z: Tensor, gain: Tensor, epsilon: float = 1e-8) -> Tensor:
    mean_square = reduce_mean(z * z, axis=-1, keepdims=True)
    return z / sqrt(mean_square + epsilon) * gain


def layernorm(z: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-8) -> Tensor:
    mu = reduce_mean(z, axis=-1, keepdims=True)
    centered = z - mu
    variance = reduce_mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(variance + epsilon) * gain + bias


def gated_rmsnorm(z: Tensor, gain: Tensor, gate: Tensor, epsilon: float = 1e-8) -> Tensor:
    return sigmoid(gate * z) * rmsnorm(z, gain, epsilon)


def apply_norm(z: Tensor, config: NormConfig, params: NormParams) -> Tensor:
    if config.kind == "none":
        return z
    if z.shape[-1] != config.width:
        raise ValueError(f"norm width {config.width} does not match input width {z.shape[-1]}")
    if config.kind == "rmsnorm":
        return rmsnorm(z, params.gain, config.epsilon)
    if config.kind == "layernorm":
        return layernorm(z, params.gain, params.bias, config.epsilon)
    if config.kind == "gated_rmsnorm":
        return gated_rmsnorm(z, params.gain, params.gate, config.epsilon)
    raise ValueError(f"unknown norm kind {config.kind!r}")
