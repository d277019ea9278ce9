"""Parameterised layers built on the tensor engine."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor, matmul, mul, relu, sigmoid, global_average_pool


def parameter(data, no_decay: bool = False) -> Tensor:
    t = Tensor(data, requires_grad=True)
    t.no_decay = no_decay
    return t


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, a: float = math.sqrt(5),
                    dtype=np.float32) -> np.ndarray:
    # a=sqrt(5) gives bound 1/sqrt(fan_in); larger gains overflow the chained SimpleGate products
    gain = math.sqrt(2.0 / (1.0 + a * a))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal module: parameters and sub-modules are discovered from attributes.

    Attribute insertion order defines the (stable) parameter order, and names
    are the dotted attribute path, e.g. ``stage3.laa1.ab2.resblock.conv1.weight``.
    Buffers are non-trainable tensors listed in ``_buffers``.
    """

    _buffers: Tuple[str, ...] = ()

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad and name not in self._buffers:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        """Parameters and buffers, in attribute order."""
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and (value.requires_grad or name in self._buffers):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_tensors(prefix + name + ".")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_tensors())

    def load_state_dict(self, state, strict: bool = True) -> None:
        own = dict(self.named_tensors())
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, t in own.items():
            if k not in state:
                continue
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def to(self, dtype) -> "Module":
        for _, t in self.named_tensors():
            t.data = t.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel_size: int = 3, stride: int = 1,
                 padding: Optional[int] = None, groups: int = 1, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, zero_init: bool = False):
        rng = rng or np.random.default_rng()
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups
        shape = (cout, cin // groups, kernel_size, kernel_size)
        fan_in = (cin // groups) * kernel_size * kernel_size
        w = np.zeros(shape, np.float32) if zero_init else kaiming_uniform(shape, fan_in, rng)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(cout, np.float32), no_decay=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    """Stride-2 3x3 upsampler by default: doubles height and width exactly."""

    def __init__(self, cin: int, cout: int, kernel_size: int = 3, stride: int = 2,
                 padding: int = 1, output_padding: int = 1, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        shape = (cin, cout, kernel_size, kernel_size)
        self.weight = parameter(kaiming_uniform(shape, cout * kernel_size * kernel_size, rng))
        self.bias = parameter(np.zeros(cout, np.float32), no_decay=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: Optional[np.random.Generator] = None,
                 zero_init: bool = False):
        rng = rng or np.random.default_rng()
        w = np.zeros((din, dout), np.float32) if zero_init else kaiming_uniform((din, dout), din, rng)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(dout, np.float32), no_decay=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValueError(f"expected rows of length {self.weight.shape[0]}, got {x.shape[-1]}")
        return matmul(x, self.weight) + self.bias


class MLP(Module):
    """Row-wise ``W2 relu(W1 x + b1) + b2``."""

    def __init__(self, din: int, hidden: int, dout: int, rng: Optional[np.random.Generator] = None):
        self.fc1 = Linear(din, hidden, rng)
        self.fc2 = Linear(hidden, dout, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class ChannelAttention(Module):
    """Squeeze-and-excitation gains ``sigmoid(up(relu(down(gap(x)))))``."""

    def __init__(self, channels: int, reduction: int = 4, rng: Optional[np.random.Generator] = None):
        if channels % reduction:
            raise ValueError(f"{channels} channels not divisible by reduction {reduction}")
        self.down = Conv2d(channels, channels // reduction, 1, rng=rng)
        self.up = Conv2d(channels // reduction, channels, 1, rng=rng)
        # test hook: gains forced to exactly 1
        self.bypass = False

    def gains(self, x: Tensor) -> Tensor:
        return sigmoid(self.up(relu(self.down(global_average_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        if self.bypass:
            return x
        return mul(x, self.gains(x))


def simple_gate(x: Tensor) -> Tensor:
    c = x.shape[-3]
    if c % 2:
        raise ValueError(f"SimpleGate needs an even channel count, got {c}")
    h = c // 2
    return x[..., :h, :, :] * x[..., h:, :, :]


class ResBlock(Module):
    """``x + gamma * conv2(relu(conv1(x)))`` with a scalar learnable gamma."""

    def __init__(self, width: int, gamma_init: float = 0.1, rng: Optional[np.random.Generator] = None):
        self.width = width
        self.conv1 = Conv2d(width, width, 3, rng=rng)
        self.conv2 = Conv2d(width, width, 3, rng=rng)
        self.gamma = parameter(np.full(1, gamma_init, np.float32), no_decay=True)

    def trunk(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(x)))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3] != self.width:
            raise ValueError(f"block width {self.width} but input has {x.shape[-3]} channels")
        return x + self.gamma * self.trunk(x)


class ResCABlock(ResBlock):
    """ResBlock whose trunk ends in channel attention."""

    def __init__(self, width: int, gamma_init: float = 0.1, reduction: int = 4,
                 rng: Optional[np.random.Generator] = None):
        super().__init__(width, gamma_init, rng)
        self.ca = ChannelAttention(width, reduction, rng)

    def trunk(self, x: Tensor) -> Tensor:
        return self.ca(super().trunk(x))
