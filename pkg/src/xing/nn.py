"""Parameter containers for the few layer types the models need.

Initialization convention: Kaiming-uniform with fan-in (bound sqrt(6/fan_in))
for weights, zeros for biases, ones/zeros for layer-norm affines. Containers
are plain dataclasses holding named Parameters; ``params()`` returns them in
a stable order for optimizers and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .tensor import Parameter, Tensor

__all__ = [
    "kaiming_uniform",
    "Conv2dParams",
    "LayerNormParams",
    "LinearParams",
    "scalar_param",
    "check_unique_names",
]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Conv2dParams:
    """Weight/bias plus the stride/pad the layer is always applied with."""

    weight: Parameter
    bias: Parameter
    stride: int = 1
    pad: int = 0

    @classmethod
    def init(cls, name: str, c_in: int, c_out: int, k: int,
             rng: np.random.Generator, stride: int = 1, pad: int = 0) -> "Conv2dParams":
        fan_in = c_in * k * k
        return cls(
            weight=Parameter(f"{name}.weight", kaiming_uniform(rng, (c_out, c_in, k, k), fan_in)),
            bias=Parameter(f"{name}.bias", np.zeros(c_out)),
            stride=stride,
            pad=pad,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return tz.conv2d(x, self.weight.value, self.bias.value, stride=self.stride, pad=self.pad)

    def params(self):
        return [self.weight, self.bias]


@dataclass
class LayerNormParams:
    gamma: Parameter
    beta: Parameter
    eps: float = 1e-5

    @classmethod
    def init(cls, name: str, dim: int, eps: float = 1e-5) -> "LayerNormParams":
        return cls(
            gamma=Parameter(f"{name}.gamma", np.ones(dim)),
            beta=Parameter(f"{name}.beta", np.zeros(dim)),
            eps=eps,
        )

    def __call__(self, x: Tensor, axis: int) -> Tensor:
        return tz.layer_norm(x, axis, self.gamma.value, self.beta.value, eps=self.eps)

    def params(self):
        return [self.gamma, self.beta]


@dataclass
class LinearParams:
    """Projection over the leading feature axis of [d_in, m] column stacks."""

    weight: Parameter  # [d_out, d_in]
    bias: Parameter    # [d_out]

    @classmethod
    def init(cls, name: str, d_in: int, d_out: int, rng: np.random.Generator) -> "LinearParams":
        return cls(
            weight=Parameter(f"{name}.weight", kaiming_uniform(rng, (d_out, d_in), d_in)),
            bias=Parameter(f"{name}.bias", np.zeros(d_out)),
        )

    def __call__(self, x: Tensor) -> Tensor:
        """Apply to columns: x is [d_in, m] or [b, d_in, m] -> [.., d_out, m]."""
        if x.ndim == 2:
            d_in, m = x.shape
            y = tz.matmul(self.weight.value, x)
            return y + tz.reshape(self.bias.value, (self.bias.value.shape[0], 1))
        if x.ndim == 3:
            b, d_in, m = x.shape
            flat = tz.reshape(tz.transpose2d(x), (b * m, d_in))
            y = tz.matmul(flat, tz.transpose2d(self.weight.value))
            y = y + self.bias.value
            return tz.transpose2d(tz.reshape(y, (b, m, self.weight.value.shape[0])))
        raise tz.ShapeError(f"LinearParams: need rank 2 or 3, got shape {x.shape}")

    def params(self):
        return [self.weight, self.bias]


def scalar_param(name: str, value: float = 0.0) -> Parameter:
    return Parameter(name, np.asarray(value, dtype=np.float64))


def check_unique_names(params) -> None:
    seen = set()
    for p in params:
        if p.name in seen:
            raise tz.ContractError(f"duplicate parameter name: {p.name}")
        seen.add(p.name)
