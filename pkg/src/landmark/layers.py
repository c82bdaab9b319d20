"""Parameter containers and the few layer types the modules are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import make_rng
from .tensor import Tensor


class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes with ``requires_grad=True``; child
    modules are attributes (or lists of them).  Names are dotted paths in
    attribute-definition order, which makes checkpoint layouts stable.
    """

    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Tensor]]:
        # a tensor shared between submodules is reported once, under its first name
        seen = set() if _seen is None else _seen
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                if id(value) not in seen:
                    seen.add(id(value))
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, seed: int, label: str, zero: bool = False,
                 gain: float = 1.0):
        rng = make_rng(seed, label)
        scale = 0.0 if zero else gain * np.sqrt(2.0 / n_in)
        self.weight = param(rng.standard_normal((n_in, n_out)) * scale)
        self.bias = param(np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Stack of linear layers with ReLU between them.

    ``final_relu`` also rectifies the last layer's output; ``last_gain``
    scales the last layer's initial weights.
    """

    def __init__(self, sizes: list[int], seed: int, label: str, final_relu: bool = False,
                 zero_last: bool = False, last_gain: float = 1.0):
        last = len(sizes) - 2
        self.layers = [
            Linear(sizes[i], sizes[i + 1], seed, f"{label}.{i}", zero=zero_last and i == last,
                   gain=last_gain if i == last else 1.0)
            for i in range(len(sizes) - 1)
        ]
        self.final_relu = final_relu

    def __call__(self, x) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = T.relu(x)
        return x


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, seed: int, label: str,
                 stride: int = 1, padding: int = 0):
        rng = make_rng(seed, label)
        fan_in = c_in * kernel * kernel
        self.weight = param(rng.standard_normal((c_out, c_in, kernel, kernel)) * np.sqrt(2.0 / fan_in))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def __call__(self, x) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gain = param(np.ones(width))
        self.bias = param(np.zeros(width))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, axis=-1, eps=self.eps)
