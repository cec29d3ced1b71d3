"""Parameter containers built on :mod:`avsteer.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-registered parameters and submodules, visited in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} vs parameter {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """y = x @ weight + bias, weight stored as (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float64, init_std: float | None = None, zero: bool = False):
        self.d_in, self.d_out = d_in, d_out
        if zero:
            w = np.zeros((d_in, d_out))
        elif init_std is not None:
            w = rng.normal(0.0, init_std, (d_in, d_out))
        else:
            bound = 1.0 / np.sqrt(d_in)
            w = rng.uniform(-bound, bound, (d_in, d_out))
        self.weight = T.parameter(w, dtype=dtype)
        self.bias = T.parameter(np.zeros(d_out), dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float64, eps: float = 1e-5):
        self.eps = eps
        self.gamma = T.parameter(np.ones(d), dtype=dtype)
        self.beta = T.parameter(np.zeros(d), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)
