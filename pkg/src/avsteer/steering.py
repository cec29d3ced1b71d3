"""Conditional low-rank steering of linear operators.

A conditioning vector ``c`` produces a modulation vector ``s`` in (-1, 1)^r and a
gate ``g`` in (0, 1).  A steered map then computes

    y = W x + g * (alpha / r) * U ((V x) * s)

without ever materializing the dense correction ``U diag(s) V``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor


class RankError(T.ShapeError):
    pass


@dataclass
class SteeringSignals:
    """Per-layer signals for the input-projection and step-size generators.

    ``s``/``s_delta`` have shape (r,) or (batch, r); ``g``/``g_delta`` are
    scalars or shape (batch,).
    """

    s: Tensor
    g: Tensor
    s_delta: Tensor
    g_delta: Tensor

    @classmethod
    def constant(cls, rank: int, rank_delta: int, batch: int, s: float = 1.0, g: float = 1.0,
                 dtype=np.float64) -> "SteeringSignals":
        def full(shape, v):
            return Tensor(np.full(shape, v, dtype=dtype))

        return cls(full((batch, rank), s), full((batch,), g), full((batch, rank_delta), s), full((batch,), g))


class LoRAFactors(Module):
    """Low-rank factors U (d_out, r) and V (r, d_in) with scale alpha / r."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float, rng: np.random.Generator,
                 dtype=np.float64, v_std: float = 0.02):
        if rank < 1 or rank > min(d_in, d_out):
            raise RankError(f"LoRA rank {rank} must lie in [1, min(d_in={d_in}, d_out={d_out})]")
        if alpha <= 0:
            raise ValueError(f"LoRA alpha must be positive, got {alpha}")
        self.rank = rank
        self.alpha = float(alpha)
        self.U = T.parameter(np.zeros((d_out, rank)), dtype=dtype)
        self.V = T.parameter(rng.normal(0.0, v_std, (rank, d_in)), dtype=dtype)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


def _per_sample(v: Tensor, x: Tensor, trailing: int) -> Tensor:
    """Reshape a per-sample signal so it broadcasts over every token of ``x``."""
    lead = v.ndim - trailing
    extra = x.ndim - 1 - lead
    if extra <= 0:
        return v
    return T.reshape(v, v.shape[:lead] + (1,) * extra + v.shape[lead:])


def steered_projection(x: Tensor, base, factors: LoRAFactors | None, s: Tensor | None,
                       g: Tensor | float | None) -> Tensor:
    """Base map plus the gated, modulated low-rank correction.

    ``base`` is any callable linear map.  With ``s`` (or ``factors``) absent the
    base output is returned untouched.  One (s, g) pair is shared by all tokens
    of a sample.
    """
    y = base(x)
    if factors is None or s is None:
        return y
    if s.shape[-1] != factors.rank:
        raise RankError(f"modulation length {s.shape[-1]} does not match LoRA rank {factors.rank}")
    low = (x @ T.transpose(factors.V)) * _per_sample(s, x, 1)
    corr = low @ T.transpose(factors.U)
    if g is None:
        g = 1.0
    if not isinstance(g, Tensor):
        g = Tensor(np.asarray(g, dtype=corr.dtype))
    gate = _per_sample(g, x, 0)
    if gate.ndim < corr.ndim:
        gate = T.reshape(gate, gate.shape + (1,))
    return y + corr * (gate * factors.scale)


def static_lora(x: Tensor, base, factors: LoRAFactors) -> Tensor:
    """Classical input-independent LoRA: (W + (alpha/r) U V) x, in factored form."""
    corr = (x @ T.transpose(factors.V)) @ T.transpose(factors.U)
    return base(x) + corr * factors.scale


def steered_dt_projection(dt_raw: Tensor, base, bias: Tensor, factors: LoRAFactors | None,
                          s_delta: Tensor | None, g_delta: Tensor | float | None) -> Tensor:
    """Step-size pre-activation: steered projection of the raw step term plus bias."""
    return steered_projection(dt_raw, base, factors, s_delta, g_delta) + bias


class SteeringHead(Module):
    """Conditioning vector -> (s, g).

    s = tanh(MLP(c)) with a SiLU hidden layer of width max(d/2, 1);
    g = sigmoid(w_g . c + b_g), or the constant 1 when the gate is disabled.
    """

    def __init__(self, d_cond: int, rank: int, rng: np.random.Generator, gate: bool = True,
                 dtype=np.float64):
        hidden = max(d_cond // 2, 1)
        self.rank = rank
        self.mlp_in = Linear(d_cond, hidden, rng, dtype=dtype)
        self.mlp_out = Linear(hidden, rank, rng, dtype=dtype)
        self.gate = Linear(d_cond, 1, rng, dtype=dtype) if gate else None

    def __call__(self, c: Tensor) -> tuple[Tensor, Tensor]:
        s = T.tanh(self.mlp_out(T.silu(self.mlp_in(c))))
        if self.gate is None:
            g = Tensor(np.ones(c.shape[:-1], dtype=c.dtype))
        else:
            z = self.gate(c)
            g = T.sigmoid(T.reshape(z, z.shape[:-1]))
        return s, g


class SteeringHeadPair(Module):
    """One head for the input-projection generator, one for the step-size generator."""

    def __init__(self, d_cond: int, rank: int, rank_delta: int, rng: np.random.Generator,
                 gate: bool = True, dtype=np.float64):
        self.head_x = SteeringHead(d_cond, rank, rng, gate=gate, dtype=dtype)
        self.head_dt = SteeringHead(d_cond, rank_delta, rng, gate=gate, dtype=dtype)


def derive_signals(c: Tensor, heads: SteeringHeadPair) -> SteeringSignals:
    s, g = heads.head_x(c)
    s_delta, g_delta = heads.head_dt(c)
    return SteeringSignals(s, g, s_delta, g_delta)
