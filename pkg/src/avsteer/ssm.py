"""Selective state-space machinery.

The state matrix is diagonal per channel: ``A`` has shape (D, N) with entries
``-exp(a_log)``.  Step sizes, input projections and readouts are generated
per token from the input, then a sequential scan runs the discrete recurrence

    h_t = A_bar_t * h_{t-1} + B_bar_t * x_t,    y_t = <C_t, h_t>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module
from .steering import LoRAFactors, SteeringSignals, steered_dt_projection, steered_projection
from .tensor import Tensor


@dataclass
class SSMConfig:
    state_dim: int
    inner_dim: int
    dt_rank: int
    conv_kernel: int = 4
    dt_min: float = 1e-3
    dt_max: float = 0.1


@dataclass
class SelectiveParams:
    delta: Tensor  # (..., L, D), strictly positive
    B: Tensor      # (..., L, N)
    C: Tensor      # (..., L, N)

    @property
    def length(self) -> int:
        return self.delta.shape[-2]


def zoh_discretize(delta, A, B) -> tuple[Tensor, Tensor]:
    """Zero-order hold on a diagonal system, elementwise with broadcasting.

    A_bar = exp(delta*A);  B_bar = (delta*A)^-1 (exp(delta*A) - 1) delta*B,
    evaluated as (A_bar - 1) / A * B which is the same expression with the
    delta factors cancelled.
    """
    delta, A, B = (T.as_tensor(v) for v in (delta, A, B))
    if np.any(delta.data <= 0):
        raise ValueError("zoh_discretize: step sizes must be strictly positive")
    if np.any(A.data >= 0):
        raise ValueError("zoh_discretize: diagonal A must be strictly negative")
    A_bar = T.exp(delta * A)
    B_bar = (A_bar - 1.0) * T.reciprocal(A) * B
    return A_bar, B_bar


def generate_selective_params(x_tilde: Tensor, x_proj, dt_proj, dt_rank: int,
                              state_dim: int) -> SelectiveParams:
    """Split p_t = x_proj(x_t) into [dt_raw, B_t, C_t] and map dt_raw to delta.

    ``dt_proj`` returns the step-size pre-activation (bias included);
    ``x_proj`` and ``dt_proj`` may be plain or steered maps.
    """
    p = x_proj(x_tilde)
    width = dt_rank + 2 * state_dim
    if p.shape[-1] != width:
        raise T.ShapeError(
            f"generator output width {p.shape[-1]} != dt_rank + 2N = {dt_rank} + 2*{state_dim}"
        )
    dt_raw = p[..., :dt_rank]
    B = p[..., dt_rank:dt_rank + state_dim]
    C = p[..., dt_rank + state_dim:]
    delta = T.softplus(dt_proj(dt_raw))
    return SelectiveParams(delta, B, C)


def selective_scan(x: Tensor, params: SelectiveParams, A: Tensor) -> Tensor:
    """Run the discrete recurrence from a zero state.  x: (..., L, D) -> y: (..., L, D)."""
    L = x.shape[-2]
    if params.delta.shape[-2] != L or params.B.shape[-2] != L or params.C.shape[-2] != L:
        raise T.ShapeError(
            f"selective_scan: sequence length {L} vs params "
            f"{params.delta.shape}, {params.B.shape}, {params.C.shape}"
        )
    A = T.as_tensor(A)
    delta4 = T.reshape(params.delta, params.delta.shape + (1,))           # (..., L, D, 1)
    B4 = T.reshape(params.B, params.B.shape[:-1] + (1, params.B.shape[-1]))  # (..., L, 1, N)
    A_bar, B_bar = zoh_discretize(delta4, A, B4)                            # (..., L, D, N)
    drive = B_bar * T.reshape(x, x.shape + (1,))

    states = []
    h = None
    for t in range(L):
        a_t = A_bar[..., t:t + 1, :, :]
        u_t = drive[..., t:t + 1, :, :]
        h = u_t if h is None else a_t * h + u_t
        states.append(h)
    H = T.concatenate(states, axis=-3) if L > 1 else states[0]
    C4 = T.reshape(params.C, params.C.shape[:-1] + (1, params.C.shape[-1]))
    return T.sum_(H * C4, axis=-1)


def causal_depthwise_conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x: (..., L, D); weight: (K, D); left zero padding of K-1 positions."""
    K = weight.shape[0]
    L = x.shape[-2]
    if K > 1:
        pad = Tensor(np.zeros(x.shape[:-2] + (K - 1, x.shape[-1]), dtype=x.dtype))
        xp = T.concatenate([pad, x], axis=-2)
    else:
        xp = x
    out = None
    for k in range(K):
        term = xp[..., k:k + L, :] * weight[k]
        out = term if out is None else out + term
    return out + bias


def init_dt_bias(inner_dim: int, rng: np.random.Generator, dt_min: float = 1e-3,
                 dt_max: float = 0.1) -> np.ndarray:
    """Bias whose softplus is log-uniform in [dt_min, dt_max]."""
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), inner_dim))
    return dt + np.log(-np.expm1(-dt))  # inverse softplus


class SelectiveBranch(Module):
    """One scan direction: short conv, steerable generators, scan, skip term."""

    def __init__(self, cfg: SSMConfig, rng: np.random.Generator, dtype=np.float64,
                 lora: tuple[int, float, int, float] | None = None):
        D, N, R = cfg.inner_dim, cfg.state_dim, cfg.dt_rank
        self.cfg = cfg
        bound = 1.0 / math.sqrt(cfg.conv_kernel)
        self.conv_weight = T.parameter(rng.uniform(-bound, bound, (cfg.conv_kernel, D)), dtype=dtype)
        self.conv_bias = T.parameter(np.zeros(D), dtype=dtype)
        self.x_proj = Linear(D, R + 2 * N, rng, bias=False, dtype=dtype)
        self.dt_proj = Linear(R, D, rng, bias=False, dtype=dtype, init_std=R ** -0.5)
        self.dt_bias = T.parameter(init_dt_bias(D, rng, cfg.dt_min, cfg.dt_max), dtype=dtype)
        self.a_log = T.parameter(np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (D, 1))), dtype=dtype)
        self.d_skip = T.parameter(np.ones(D), dtype=dtype)
        if lora is not None:
            r, alpha, r_dt, alpha_dt = lora
            self.lora_x = LoRAFactors(D, R + 2 * N, r, alpha, rng, dtype=dtype)
            self.lora_dt = LoRAFactors(R, D, r_dt, alpha_dt, rng, dtype=dtype)
        else:
            self.lora_x = None
            self.lora_dt = None

    @property
    def A(self) -> Tensor:
        return -T.exp(self.a_log)

    def params(self, x_tilde: Tensor, signals: SteeringSignals | None = None) -> SelectiveParams:
        if signals is None or self.lora_x is None:
            x_proj = self.x_proj
            dt_proj = lambda r: r @ self.dt_proj.weight + self.dt_bias  # noqa: E731
        else:
            x_proj = lambda v: steered_projection(v, self.x_proj, self.lora_x, signals.s, signals.g)  # noqa: E731
            dt_proj = lambda r: steered_dt_projection(  # noqa: E731
                r, self.dt_proj, self.dt_bias, self.lora_dt, signals.s_delta, signals.g_delta
            )
        return generate_selective_params(x_tilde, x_proj, dt_proj, self.cfg.dt_rank, self.cfg.state_dim)

    def core(self, x: Tensor, signals: SteeringSignals | None = None) -> Tensor:
        """Forward-order processing of (..., L, D) inner features."""
        x_tilde = T.silu(causal_depthwise_conv(x, self.conv_weight, self.conv_bias))
        p = self.params(x_tilde, signals)
        return selective_scan(x_tilde, p, self.A) + x_tilde * self.d_skip

    def __call__(self, x: Tensor, signals: SteeringSignals | None = None, reverse: bool = False) -> Tensor:
        if not reverse:
            return self.core(x, signals)
        return T.flip(self.core(T.flip(x, -2), signals), -2)


class BidirectionalBlock(Module):
    """Pre-norm residual block with forward and flipped selective branches.

    out = tokens + W_out[(y_fwd + y_bwd) * silu(z)], where [x; z] = W_in LN(tokens).
    """

    def __init__(self, d_model: int, cfg: SSMConfig, rng: np.random.Generator, dtype=np.float64,
                 lora: tuple[int, float, int, float] | None = None):
        self.cfg = cfg
        self.norm = LayerNorm(d_model, dtype=dtype)
        self.in_proj = Linear(d_model, 2 * cfg.inner_dim, rng, bias=False, dtype=dtype)
        self.fwd = SelectiveBranch(cfg, rng, dtype=dtype, lora=lora)
        self.bwd = SelectiveBranch(cfg, rng, dtype=dtype, lora=lora)
        self.out_proj = Linear(cfg.inner_dim, d_model, rng, bias=False, dtype=dtype)

    @property
    def steerable(self) -> bool:
        return self.fwd.lora_x is not None

    def __call__(self, tokens: Tensor, signals: SteeringSignals | None = None) -> Tensor:
        D = self.cfg.inner_dim
        xz = self.in_proj(self.norm(tokens))
        x, z = xz[..., :D], xz[..., D:]
        merged = self.fwd(x, signals) + self.bwd(x, signals, reverse=True)
        return tokens + self.out_proj(merged * T.silu(z))
