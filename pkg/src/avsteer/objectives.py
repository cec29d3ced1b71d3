"""Classification and audio-video alignment losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor

RHO_BOUNDS = (math.log(1e-3), math.log(1e3))


class ProjectionHeads(Module):
    """Linear maps into the shared space plus the log-temperature rho (tau = exp(rho))."""

    def __init__(self, d_audio: int, d_video: int, d_shared: int, rng: np.random.Generator,
                 dtype=np.float64, rho_init: float = math.log(1.0 / 0.07)):
        self.f_a = Linear(d_audio, d_shared, rng, dtype=dtype)
        self.f_v = Linear(d_video, d_shared, rng, dtype=dtype)
        self.rho = T.parameter(np.array([rho_init]), dtype=dtype)

    @property
    def tau(self) -> float:
        return float(np.exp(self.rho.data[0]))

    def clamp_temperature(self) -> None:
        self.rho.data = np.clip(self.rho.data, *RHO_BOUNDS).astype(self.rho.dtype)

    def swapped(self) -> "ProjectionHeads":
        """Same parameters with the audio and video roles exchanged."""
        other = object.__new__(ProjectionHeads)
        other.f_a, other.f_v, other.rho = self.f_v, self.f_a, self.rho
        return other


@dataclass
class LossReport:
    l_cls: float
    l_av: float
    l_total: float
    tau: float


def bce_with_logits(q: Tensor, y) -> Tensor:
    """Mean of softplus(q) - y*q, the overflow-safe form of binary cross-entropy."""
    y = np.asarray(y, dtype=q.dtype).reshape(q.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return T.mean(T.softplus(q) - q * Tensor(y))


def _directional(sim: Tensor) -> Tensor:
    """-mean_i log softmax(sim[i])[i]; rows are queries."""
    B = sim.shape[0]
    # the row max is a constant shift, so it needs no gradient
    shift = Tensor(sim.data.max(axis=-1, keepdims=True))
    lse = T.log(T.sum_(T.exp(sim - shift), axis=-1)) + T.reshape(shift, (B,))
    diag = T.sum_(sim * Tensor(np.eye(B, dtype=sim.dtype)), axis=-1)
    return T.mean(lse - diag)


def av_infonce(z_a: Tensor, z_v: Tensor, heads: ProjectionHeads) -> Tensor:
    """Symmetric in-batch contrastive loss; positives pair row i with row i."""
    a = T.l2_normalize(heads.f_a(z_a), axis=-1)
    v = T.l2_normalize(heads.f_v(z_v), axis=-1)
    inv_tau = T.exp(-heads.rho)
    B, D = a.shape
    # elementwise products summed along the feature axis keep sim(a, v) == sim(v, a).T bitwise
    prod = T.reshape(a, (B, 1, D)) * T.reshape(v, (1, B, D))
    sim = T.sum_(prod, axis=-1) * inv_tau
    return (_directional(sim) + _directional(T.transpose(sim))) * 0.5


def total_loss(l_cls: Tensor, l_av: Tensor | None, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if l_av is None or lam == 0:
        return l_cls
    return l_cls + l_av * lam
