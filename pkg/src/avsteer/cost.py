"""Exact parameter and multiply-accumulate counts from config arithmetic alone.

Nothing here builds a model.  MACs cover one batch-1 encode_pair: every
matmul counts d_in*d_out per token, the selective scan counts per timestep
(discretized input, state update, readout), and elementwise activations are
ignored.  FLOPs are reported as 2 * MACs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backbones import audio_token_count, effective_ranks, steering_direction
from .config import ModelConfig


@dataclass
class CostReport:
    parameters: int
    macs: int
    breakdown: dict[str, int] = field(default_factory=dict)
    mac_breakdown: dict[str, int] = field(default_factory=dict)
    lora_parameters: int = 0
    steering_head_parameters: int = 0
    contrastive_head_macs: int = 0

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def steering_overhead(self) -> int:
        return self.lora_parameters + self.steering_head_parameters

    def to_dict(self) -> dict:
        return {
            "parameters": self.parameters, "macs": self.macs, "flops": self.flops,
            "lora_parameters": self.lora_parameters,
            "steering_head_parameters": self.steering_head_parameters,
            "steering_overhead": self.steering_overhead,
            "contrastive_head_macs": self.contrastive_head_macs,
            "breakdown": dict(self.breakdown), "mac_breakdown": dict(self.mac_breakdown),
        }

    def text(self) -> str:
        lines = [f"{'component':<24}{'params':>14}{'MACs':>16}"]
        for k in self.breakdown:
            lines.append(f"{k:<24}{self.breakdown[k]:>14,}{self.mac_breakdown.get(k, 0):>16,}")
        lines.append(f"{'total':<24}{self.parameters:>14,}{self.macs:>16,}")
        lines.append(f"{'steering overhead':<24}{self.steering_overhead:>14,}"
                     f"   (LoRA {self.lora_parameters:,} + heads {self.steering_head_parameters:,})")
        lines.append(f"FLOPs per clip (2 x MACs): {self.flops:,}  ({self.flops / 1e9:.3f} G)")
        return "\n".join(lines)


def linear_params(d_in: int, d_out: int, bias: bool = True) -> int:
    return d_in * d_out + (d_out if bias else 0)


def lora_params(d_in: int, d_out: int, rank: int) -> int:
    return rank * (d_in + d_out)


def _branch(d_inner: int, R: int, N: int, K: int, ranks: tuple[int, int] | None) -> tuple[int, int, int]:
    """(params excluding LoRA, LoRA params, per-token MACs) for one selective branch."""
    p = K * d_inner + d_inner                  # depthwise conv weight + bias
    p += d_inner * (R + 2 * N)                 # x_proj
    p += R * d_inner + d_inner                 # dt_proj + dt bias
    p += d_inner * N + d_inner                 # A (log form) + D skip
    macs = K * d_inner + d_inner * (R + 2 * N) + R * d_inner
    macs += 3 * d_inner * N                    # B_bar x, A_bar h, C . h per timestep
    lora = 0
    if ranks is not None:
        r, r_dt = ranks
        lora = lora_params(d_inner, R + 2 * N, r) + lora_params(R, d_inner, r_dt)
        macs += lora
    return p, lora, macs


def _block(cfg: ModelConfig, d: int, steered: bool) -> tuple[int, int, int]:
    """(params excluding LoRA, LoRA params, per-token MACs) for one bidirectional block."""
    D, R, N, K = cfg.expand * d, cfg.dt_rank_for(d), cfg.state_dim, cfg.conv_kernel
    ranks = effective_ranks(cfg, d) if steered else None
    bp, bl, bm = _branch(D, R, N, K, ranks)
    params = 2 * d + d * 2 * D + D * d + 2 * bp
    macs = d * 2 * D + D * d + 2 * bm
    return params, 2 * bl, macs


def _head_params(d_cond: int, rank: int, gate: bool) -> int:
    h = max(d_cond // 2, 1)
    return linear_params(d_cond, h) + linear_params(h, rank) + (linear_params(d_cond, 1) if gate else 0)


def cost_report(cfg: ModelConfig) -> CostReport:
    plan = steering_direction(cfg)
    fused = cfg.modality == "av"
    has = {"video": cfg.modality in ("av", "video"), "audio": cfg.modality in ("av", "audio")}
    dims = {"video": cfg.d_video, "audio": cfg.d_audio}
    hw = (cfg.image_size // cfg.video_patch) ** 2
    n_a = audio_token_count(cfg) if has["audio"] else 0
    tokens = {"video": cfg.frames * hw + 1, "audio": n_a + 1}
    active = set(plan.active_layers(cfg.depth)) if fused else set()
    targets = plan.targets if fused else ()
    source = {"video": "audio", "audio": "video"}
    lora_kinds = ("conditional_lora", "static_lora")

    params: dict[str, int] = {}
    macs: dict[str, int] = {}
    lora_total = head_total = 0

    if has["video"]:
        d, p = cfg.d_video, cfg.video_patch
        params["video_embed"] = linear_params(3 * p * p, d) + d + (hw + 1) * d + cfg.frames * d
        macs["video_embed"] = cfg.frames * hw * 3 * p * p * d
    if has["audio"]:
        d = cfg.d_audio
        pf, pt = cfg.audio_patch
        params["audio_embed"] = linear_params(pf * pt, d) + d + (n_a + 1) * d
        macs["audio_embed"] = n_a * pf * pt * d

    for mod in ("video", "audio"):
        if not has[mod]:
            continue
        d, L = dims[mod], tokens[mod]
        bp = bm = 0
        for l in range(cfg.depth):
            steered = mod in targets and l in active and plan.kind in lora_kinds
            p_, lora, m = _block(cfg, d, steered)
            bp += p_
            lora_total += lora
            bm += L * m
        params[f"{mod}_blocks"] = bp
        macs[f"{mod}_blocks"] = bm
        is_source = source[mod] in targets
        n_norms = sum(1 for l in range(cfg.depth) if l == cfg.depth - 1 or (is_source and l in active))
        params[f"{mod}_cls_norms"] = 2 * d * n_norms

    lat_p = lat_m = 0
    for mod in targets:
        d_t, d_s = dims[mod], dims[source[mod]]
        L_t, L_s = tokens[mod], tokens[source[mod]]
        for _ in active:
            if plan.kind == "conditional_lora":
                r, r_dt = effective_ranks(cfg, d_t)
                hp = _head_params(d_s, r, plan.gate) + _head_params(d_s, r_dt, plan.gate)
                head_total += hp
                h = max(d_s // 2, 1)
                lat_m += sum(d_s * h + h * rk + (d_s if plan.gate else 0) for rk in (r, r_dt))
            elif plan.kind == "film":
                lat_p += 2 * linear_params(d_s, d_t)
                lat_m += 2 * d_s * d_t
            elif plan.kind == "feature_fusion" and plan.fusion_op == "add":
                lat_p += linear_params(d_s, d_t)
                lat_m += d_s * d_t
            elif plan.kind == "feature_fusion":
                lat_p += linear_params(d_t + d_s, d_t)
                lat_m += L_t * (d_t + d_s) * d_t
            elif plan.kind == "cross_attention":
                lat_p += 2 * d_t * d_t + 2 * d_s * d_t
                lat_m += 2 * L_t * d_t * d_t + 2 * L_s * d_s * d_t + 2 * L_t * L_s * d_t
    if head_total:
        params["steering_heads"] = head_total
    if lat_p:
        params["lateral_connectors"] = lat_p
    if lat_m:
        macs["steering_heads" if head_total else "lateral_connectors"] = lat_m
    if lora_total:
        params["lora_factors"] = lora_total

    d_head = sum(dims[m] for m in ("video", "audio") if has[m])
    params["classifier"] = linear_params(d_head, 1)
    macs["classifier"] = d_head
    contrastive = 0
    if fused:
        params["projection_heads"] = linear_params(cfg.d_audio, cfg.shared_dim) + \
            linear_params(cfg.d_video, cfg.shared_dim) + 1
        contrastive = (cfg.d_audio + cfg.d_video) * cfg.shared_dim

    return CostReport(
        parameters=sum(params.values()),
        macs=sum(macs.values()),
        breakdown=params,
        mac_breakdown=macs,
        lora_parameters=lora_total,
        steering_head_parameters=head_total,
        contrastive_head_macs=contrastive,
    )
