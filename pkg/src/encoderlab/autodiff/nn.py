"""Minimal module tree: named parameters, children, and ReLU taps."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .init import orthogonal
from .optim import Parameter
from .tensor import Tensor

# name -> post-ReLU activation, filled in when a dict is passed to forward()
Taps = Optional[dict]


class Module:
    def __init__(self):
        self._children: dict[str, Module] = {}
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value, name=name)
        self._params[name] = p
        return p

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing tensors in state: {sorted(missing)[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype)

    def children(self) -> dict[str, "Module"]:
        return self._children

    def __call__(self, x: Tensor, taps: Taps = None, **kwargs) -> Tensor:
        return self.forward(x, taps, **kwargs)

    def forward(self, x: Tensor, taps: Taps = None) -> Tensor:
        raise NotImplementedError


def tapped_relu(x: Tensor, taps: Taps, name: str) -> Tensor:
    y = F.relu(x)
    if taps is not None:
        taps[name] = y.data
    return y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, groups: int = 1, gain: float = np.sqrt(2)):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.padding, self.groups = stride, padding, groups
        self.weight = self.param("weight", orthogonal((c_out, c_in // groups, k, k), gain, rng))
        self.bias = self.param("bias", np.zeros(c_out, dtype=np.float32))

    def forward(self, x: Tensor, taps: Taps = None) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def output_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        _, h, w = shape
        out = lambda s: (s + 2 * self.padding - self.k) // self.stride + 1  # noqa: E731
        return (self.c_out, out(h), out(w))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = np.sqrt(2)):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.param("weight", orthogonal((n_out, n_in), gain, rng))
        self.bias = self.param("bias", np.zeros(n_out, dtype=np.float32))

    def forward(self, x: Tensor, taps: Taps = None) -> Tensor:
        return F.linear(x, self.weight, self.bias)
