"""Module/parameter containers and the handful of layers the models need."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import ops
from .core import Tensor, active_counter, default_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype or default_dtype())


class Module:
    """Registers parameters and submodules in attribute order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
            object.__setattr__(value, "_scope_name", name)
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, name: Optional[str] = None, **kwargs):
        counter = active_counter()
        if counter is None:
            return self.forward(*args, **kwargs)
        counter.scope.append(name or getattr(self, "_scope_name", type(self).__name__))
        try:
            return self.forward(*args, **kwargs)
        finally:
            counter.scope.pop()

    def children(self) -> Iterator[tuple]:
        return iter(self._modules.items())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.asarray(arr, dtype=p.dtype, order="C")

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel_size, rng, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        fan_in = (cin // groups) * kernel_size * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Parameter(_uniform(rng, (cout, cin // groups, kernel_size, kernel_size), bound))
        self.bias = Parameter(_uniform(rng, (cout,), bound)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, cin, cout, rng, bias=True):
        super().__init__()
        bound = 1.0 / math.sqrt(cin)
        self.weight = Parameter(_uniform(rng, (cin, cout), bound))
        self.bias = Parameter(_uniform(rng, (cout,), bound)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class GroupNorm(Module):
    """Group norm with groups of ``channels_per_group`` channels (capped at C)."""

    def __init__(self, channels: int, channels_per_group: int = 32, eps: float = 1e-5):
        super().__init__()
        per = min(channels_per_group, channels)
        while channels % per:
            per -= 1
        self.num_groups = channels // per
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.num_groups, self.weight, self.bias, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Token MLP: Linear layers with ReLU between them."""

    def __init__(self, dims, rng):
        super().__init__()
        self.layers = ModuleList(Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: Tensor) -> Tensor:
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1:
                x = ops.relu(x)
        return x
