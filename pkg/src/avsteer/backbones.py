"""Video and audio token pipelines, per-layer lateral connections, fusion head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audio import AudioWave, MelConfig, log_mel
from .config import (
    DIRECTIONS,
    FUSION_OPS,
    SCHEDULES,
    STEERING_MODES,
    ConfigError,
    ModelConfig,
)
from .nn import LayerNorm, Linear, Module
from .objectives import ProjectionHeads
from .ssm import BidirectionalBlock, SSMConfig
from .steering import SteeringHeadPair, SteeringSignals, derive_signals
from .tensor import Tensor


class DepthMismatchError(ConfigError):
    pass


class DivisibilityError(T.ShapeError):
    pass


@dataclass
class VideoClip:
    frames: np.ndarray  # (3, T, H, W) in [0, 1]
    fps: float = 8.0


# ----------------------------------------------------------------- steering plan


@dataclass(frozen=True)
class SteeringPlan:
    """Resolved lateral-connection design: what flows where, and at which layers."""

    kind: str
    direction: str
    gate: bool
    fusion_op: str | None
    schedule: str

    @property
    def label(self) -> str:
        if self.kind == "conditional_lora":
            return self.direction
        if self.kind == "feature_fusion":
            return f"feature_fusion({self.fusion_op}, {self.schedule})"
        if self.kind == "film":
            return "film"
        return self.kind

    @property
    def targets(self) -> tuple[str, ...]:
        return {"video_to_audio": ("audio",), "audio_to_video": ("video",),
                "crisscross": ("video", "audio")}[self.direction]

    def active_layers(self, depth: int) -> list[int]:
        if self.schedule == "early":
            return [0]
        if self.schedule == "late":
            return [depth - 1]
        return list(range(depth))


def steering_direction(cfg: ModelConfig) -> SteeringPlan:
    s = cfg.steering
    if s.mode not in STEERING_MODES:
        raise ConfigError(f"unknown steering mode '{s.mode}'")
    if s.direction not in DIRECTIONS:
        raise ConfigError(f"unknown steering direction '{s.direction}'")
    if s.schedule not in SCHEDULES:
        raise ConfigError(f"unknown schedule '{s.schedule}'")
    if s.mode == "feature_fusion" and s.fusion_op not in FUSION_OPS:
        raise ConfigError(f"unknown fusion op '{s.fusion_op}'")
    return SteeringPlan(
        kind=s.mode,
        direction=s.direction,
        gate=bool(s.gate) if s.mode == "conditional_lora" else False,
        fusion_op=s.fusion_op if s.mode == "feature_fusion" else None,
        schedule=s.schedule,
    )


def effective_ranks(cfg: ModelConfig, d_model: int) -> tuple[int, int]:
    """LoRA ranks after clamping to the factor shapes they adapt."""
    D = cfg.expand * d_model
    R = cfg.dt_rank_for(d_model)
    r = min(cfg.steering.rank, D, R + 2 * cfg.state_dim)
    r_dt = min(cfg.steering.rank_dt, R, D)
    return r, r_dt


# -------------------------------------------------------------------- embeddings


def patchify_video(frames: np.ndarray, patch: int) -> np.ndarray:
    """(B, 3, T, H, W) -> (B, T, hw, 3*patch*patch), row-major patches per frame."""
    B, Cc, Tn, H, W = frames.shape
    if H % patch or W % patch:
        raise DivisibilityError(f"frame size {H}x{W} not divisible by patch {patch}")
    h, w = H // patch, W // patch
    x = frames.reshape(B, Cc, Tn, h, patch, w, patch)
    x = x.transpose(0, 2, 3, 5, 1, 4, 6)
    return x.reshape(B, Tn, h * w, Cc * patch * patch)


def patchify_mel(mel: np.ndarray, patch: tuple[int, int]) -> np.ndarray:
    """(B, n_mels, F) -> (B, (n_mels/pf)*(F/pt), pf*pt), frequency-major patch order."""
    B, M, F = mel.shape
    pf, pt = patch
    if M % pf or F % pt:
        raise DivisibilityError(f"mel {M}x{F} not divisible by patch {pf}x{pt}")
    x = mel.reshape(B, M // pf, pf, F // pt, pt).transpose(0, 1, 3, 2, 4)
    return x.reshape(B, (M // pf) * (F // pt), pf * pt)


def crop_mel_frames(mel: np.ndarray, patch_time: int) -> np.ndarray:
    """Drop trailing frames so the time axis divides into whole patches."""
    F = mel.shape[-1]
    return mel[..., : (F // patch_time) * patch_time]


class VideoEmbed(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        p = cfg.video_patch
        if cfg.image_size % p:
            raise DivisibilityError(f"image size {cfg.image_size} not divisible by patch {p}")
        self.patch = p
        self.frames = cfg.frames
        self.hw = (cfg.image_size // p) ** 2
        d = cfg.d_video
        self.proj = Linear(3 * p * p, d, rng, dtype=dtype)
        self.cls = T.parameter(rng.normal(0, 0.02, d), dtype=dtype)
        self.pos_spatial = T.parameter(rng.normal(0, 0.02, (self.hw + 1, d)), dtype=dtype)
        self.pos_temporal = T.parameter(rng.normal(0, 0.02, (cfg.frames, d)), dtype=dtype)

    def patch_tokens(self, frames: np.ndarray) -> Tensor:
        """Projected patches before any embedding: (B, T, hw, d)."""
        patches = patchify_video(np.asarray(frames), self.patch)
        if patches.shape[1] != self.frames or patches.shape[2] != self.hw:
            raise DivisibilityError(
                f"clip gives {patches.shape[1]} frames x {patches.shape[2]} patches, "
                f"model expects {self.frames} x {self.hw}"
            )
        return self.proj(Tensor(patches.astype(self.cls.dtype)))

    def __call__(self, frames: np.ndarray) -> Tensor:
        x = self.patch_tokens(frames)
        B, Tn, hw, d = x.shape
        x = x + self.pos_spatial[1:] + T.reshape(self.pos_temporal, (Tn, 1, d))
        x = T.reshape(x, (B, Tn * hw, d))
        cls = T.broadcast_to(T.reshape(self.cls + self.pos_spatial[0], (1, 1, d)), (B, 1, d))
        return T.concatenate([cls, x], axis=1)


class AudioEmbed(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        pf, pt = cfg.audio_patch
        if cfg.n_mels % pf:
            raise DivisibilityError(f"{cfg.n_mels} mel bins not divisible by patch height {pf}")
        n_frames = audio_frames(cfg)
        self.patch = (pf, pt)
        self.mean, self.std = cfg.mel_mean, cfg.mel_std
        self.n_tokens = (cfg.n_mels // pf) * (n_frames // pt)
        d = cfg.d_audio
        self.proj = Linear(pf * pt, d, rng, dtype=dtype)
        self.cls = T.parameter(rng.normal(0, 0.02, d), dtype=dtype)
        self.pos = T.parameter(rng.normal(0, 0.02, (self.n_tokens + 1, d)), dtype=dtype)

    def patch_tokens(self, mel: np.ndarray) -> Tensor:
        x = (np.asarray(mel) - self.mean) / self.std
        patches = patchify_mel(x, self.patch)
        if patches.shape[1] != self.n_tokens:
            raise DivisibilityError(f"mel gives {patches.shape[1]} patches, model expects {self.n_tokens}")
        return self.proj(Tensor(patches.astype(self.cls.dtype)))

    def __call__(self, mel: np.ndarray) -> Tensor:
        x = self.patch_tokens(mel)
        B, _, d = x.shape
        cls = T.broadcast_to(T.reshape(self.cls, (1, 1, d)), (B, 1, d))
        return T.concatenate([cls, x], axis=1) + self.pos


def audio_frames(cfg: ModelConfig) -> int:
    """Mel frames fed to the audio tokenizer after cropping to whole patches."""
    mc = MelConfig(cfg.sample_rate, cfg.n_mels, cfg.win_ms, cfg.hop_ms)
    n = mc.num_frames(int(round(cfg.audio_seconds * cfg.sample_rate)))
    pt = cfg.audio_patch[1]
    if n < pt:
        raise DivisibilityError(f"{n} mel frames shorter than one patch ({pt})")
    return (n // pt) * pt


def video_token_count(cfg: ModelConfig) -> int:
    return cfg.frames * (cfg.image_size // cfg.video_patch) ** 2


def audio_token_count(cfg: ModelConfig) -> int:
    return (cfg.n_mels // cfg.audio_patch[0]) * (audio_frames(cfg) // cfg.audio_patch[1])


# ------------------------------------------------------------ lateral connectors


class FiLM(Module):
    """tokens * (1 + gamma(c)) + beta(c); zero-initialized so it starts as identity."""

    def __init__(self, d_src: int, d_tgt: int, rng, dtype):
        self.gamma = Linear(d_src, d_tgt, rng, dtype=dtype, zero=True)
        self.beta = Linear(d_src, d_tgt, rng, dtype=dtype, zero=True)

    def __call__(self, tokens: Tensor, c: Tensor, src_tokens: Tensor) -> Tensor:
        B, d = tokens.shape[0], tokens.shape[-1]
        gam = T.reshape(self.gamma(c), (B, 1, d))
        bet = T.reshape(self.beta(c), (B, 1, d))
        return tokens * (gam + 1.0) + bet


class AddFusion(Module):
    def __init__(self, d_src: int, d_tgt: int, rng, dtype):
        self.proj = Linear(d_src, d_tgt, rng, dtype=dtype)

    def __call__(self, tokens: Tensor, c: Tensor, src_tokens: Tensor) -> Tensor:
        B, d = tokens.shape[0], tokens.shape[-1]
        return tokens + T.reshape(self.proj(c), (B, 1, d))


class ConcatFusion(Module):
    """[tokens ; c] -> d_tgt, initialized to pass tokens through unchanged."""

    def __init__(self, d_src: int, d_tgt: int, rng, dtype):
        w = np.concatenate([np.eye(d_tgt), rng.normal(0, 0.02, (d_src, d_tgt))], axis=0)
        self.proj = Linear(d_tgt + d_src, d_tgt, rng, dtype=dtype)
        self.proj.weight.data = w.astype(dtype)

    def __call__(self, tokens: Tensor, c: Tensor, src_tokens: Tensor) -> Tensor:
        B, L = tokens.shape[0], tokens.shape[1]
        cb = T.broadcast_to(T.reshape(c, (B, 1, c.shape[-1])), (B, L, c.shape[-1]))
        return self.proj(T.concatenate([tokens, cb], axis=-1))


class CrossAttention(Module):
    """Single-head attention from target tokens onto the source layer's tokens, residual."""

    def __init__(self, d_src: int, d_tgt: int, rng, dtype):
        self.q = Linear(d_tgt, d_tgt, rng, bias=False, dtype=dtype)
        self.k = Linear(d_src, d_tgt, rng, bias=False, dtype=dtype)
        self.v = Linear(d_src, d_tgt, rng, bias=False, dtype=dtype)
        self.o = Linear(d_tgt, d_tgt, rng, bias=False, dtype=dtype, zero=True)
        self.scale = 1.0 / np.sqrt(d_tgt)

    def __call__(self, tokens: Tensor, c: Tensor, src_tokens: Tensor) -> Tensor:
        scores = self.q(tokens) @ T.swapaxes(self.k(src_tokens), -1, -2)
        att = T.softmax(scores * self.scale, axis=-1)
        return tokens + self.o(att @ self.v(src_tokens))


_FEATURE_CONNECTORS = {"film": FiLM, "cross_attention": CrossAttention}


# -------------------------------------------------------------------- the model


class AVModel(Module):
    """Paired video/audio encoder with per-layer lateral connections and a fused logit."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        if cfg.modality == "av" and cfg.depth_audio != cfg.depth:
            raise DepthMismatchError(
                f"video depth {cfg.depth} != audio depth {cfg.depth_audio}; steering needs aligned layers"
            )
        dtype = np.dtype(cfg.dtype)
        self.cfg = cfg
        self.plan = steering_direction(cfg)
        self.has_video = cfg.modality in ("av", "video")
        self.has_audio = cfg.modality in ("av", "audio")
        fused = cfg.modality == "av"
        depth = cfg.depth
        plan = self.plan
        active = set(plan.active_layers(depth)) if fused else set()
        targets = plan.targets if fused else ()

        def lora_for(mod: str, d: int):
            if mod in targets and plan.kind in ("conditional_lora", "static_lora"):
                r, r_dt = effective_ranks(cfg, d)
                return (r, cfg.steering.alpha, r_dt, cfg.steering.alpha_dt)
            return None

        def ssm_cfg(d: int) -> SSMConfig:
            return SSMConfig(cfg.state_dim, cfg.expand * d, cfg.dt_rank_for(d), cfg.conv_kernel, cfg.dt_min, cfg.dt_max)

        dims = {"video": cfg.d_video, "audio": cfg.d_audio}
        present = [m for m, on in (("video", self.has_video), ("audio", self.has_audio)) if on]
        sources = {"video": "audio", "audio": "video"}

        for mod in ("video", "audio"):
            if mod not in present:
                setattr(self, f"{mod}_embed", None)
                setattr(self, f"{mod}_blocks", [])
                setattr(self, f"{mod}_cls_norms", [])
                continue
            d = dims[mod]
            setattr(self, f"{mod}_embed", (VideoEmbed if mod == "video" else AudioEmbed)(cfg, rng, dtype))
            setattr(self, f"{mod}_blocks", [
                BidirectionalBlock(d, ssm_cfg(d), rng, dtype=dtype, lora=lora_for(mod, d) if l in active else None)
                for l in range(depth)
            ])
            # per-layer CLS normalization where this modality conditions the other, and at the top
            is_source = sources[mod] in targets
            setattr(self, f"{mod}_cls_norms", [
                LayerNorm(d, dtype=dtype) if (l == depth - 1 or (is_source and l in active)) else None
                for l in range(depth)
            ])

        for mod in ("video", "audio"):
            laterals = []
            for l in range(depth):
                conn = None
                if mod in targets and l in active:
                    d_src, d_tgt = dims[sources[mod]], dims[mod]
                    r, r_dt = effective_ranks(cfg, d_tgt)
                    if plan.kind == "conditional_lora":
                        conn = SteeringHeadPair(d_src, r, r_dt, rng, gate=plan.gate, dtype=dtype)
                    elif plan.kind == "feature_fusion":
                        conn = (AddFusion if plan.fusion_op == "add" else ConcatFusion)(d_src, d_tgt, rng, dtype)
                    elif plan.kind in _FEATURE_CONNECTORS:
                        conn = _FEATURE_CONNECTORS[plan.kind](d_src, d_tgt, rng, dtype)
                laterals.append(conn)
            setattr(self, f"{mod}_laterals", laterals)

        d_head = (cfg.d_video if self.has_video else 0) + (cfg.d_audio if self.has_audio else 0)
        self.classifier = Linear(d_head, 1, rng, dtype=dtype)
        self.proj_heads = ProjectionHeads(cfg.d_audio, cfg.d_video, cfg.shared_dim, rng, dtype=dtype) if fused else None

    # -- layer plumbing

    def _lateral(self, target: str, layer: int, tokens: Tensor, src_tokens: Tensor | None,
                 force_gate: float | None):
        conn = getattr(self, f"{target}_laterals")[layer] if self.cfg.modality == "av" else None
        block = getattr(self, f"{target}_blocks")[layer]
        if src_tokens is None:
            return tokens, None
        source = "audio" if target == "video" else "video"
        if conn is None and not (self.plan.kind == "static_lora" and block.steerable):
            return tokens, None
        if self.plan.kind == "static_lora":
            cfg_r = block.fwd.lora_x.rank, block.fwd.lora_dt.rank
            sig = SteeringSignals.constant(cfg_r[0], cfg_r[1], tokens.shape[0], dtype=tokens.dtype)
            return tokens, self._force(sig, force_gate)
        c = getattr(self, f"{source}_cls_norms")[layer](src_tokens[:, 0])
        if isinstance(conn, SteeringHeadPair):
            return tokens, self._force(derive_signals(c, conn), force_gate)
        return conn(tokens, c, src_tokens), None

    @staticmethod
    def _force(sig: SteeringSignals, force_gate: float | None) -> SteeringSignals:
        if force_gate is None:
            return sig
        B = sig.g.shape
        fill = Tensor(np.full(B, force_gate, dtype=sig.g.dtype))
        return SteeringSignals(sig.s, fill, sig.s_delta, fill)

    # -- public forward API

    def encode(self, video: np.ndarray | None, mel: np.ndarray | None, force_gate: float | None = None):
        """Batched forward.  Returns (z_v, z_a, q); absent modalities give None."""
        v = self.video_embed(video) if self.has_video else None
        a = self.audio_embed(mel) if self.has_audio else None
        direction = self.plan.direction
        for l in range(self.cfg.depth):
            if direction == "audio_to_video" and a is not None and v is not None:
                a = self.audio_blocks[l](a)
                v_in, sig = self._lateral("video", l, v, a, force_gate)
                v = self.video_blocks[l](v_in, sig)
            elif direction == "crisscross" and a is not None and v is not None:
                v_in, sig_v = self._lateral("video", l, v, a, force_gate)
                v = self.video_blocks[l](v_in, sig_v)
                a_in, sig_a = self._lateral("audio", l, a, v, force_gate)
                a = self.audio_blocks[l](a_in, sig_a)
            else:
                if v is not None:
                    v = self.video_blocks[l](v)
                if a is not None:
                    a_in, sig = self._lateral("audio", l, a, v, force_gate)
                    a = self.audio_blocks[l](a_in, sig)
        z_v = self.video_cls_norms[-1](v[:, 0]) if v is not None else None
        z_a = self.audio_cls_norms[-1](a[:, 0]) if a is not None else None
        h = T.concatenate([z for z in (z_v, z_a) if z is not None], axis=-1) if (z_v is not None and z_a is not None) \
            else (z_v if z_v is not None else z_a)
        q = self.classifier(h)
        return z_v, z_a, T.reshape(q, (q.shape[0],))

    def encode_audio_unconditioned(self, mel: np.ndarray) -> Tensor:
        """Audio branch with every steering signal absent, same weights."""
        a = self.audio_embed(mel)
        for block in self.audio_blocks:
            a = block(a)
        return self.audio_cls_norms[-1](a[:, 0])

    def steering_signals(self, video: np.ndarray, mel: np.ndarray) -> list[SteeringSignals | None]:
        """Per-layer signals produced for the audio branch (video->audio plans)."""
        out = []
        v = self.video_embed(video)
        a = self.audio_embed(mel)
        for l in range(self.cfg.depth):
            v = self.video_blocks[l](v)
            a_in, sig = self._lateral("audio", l, a, v, None)
            out.append(sig)
            a = self.audio_blocks[l](a_in, sig)
        return out


def prepare_mel(wave: AudioWave, cfg: ModelConfig) -> np.ndarray:
    """Waveform -> cropped log-mel bins ready for the audio tokenizer."""
    mc = MelConfig(cfg.sample_rate, cfg.n_mels, cfg.win_ms, cfg.hop_ms)
    mel = log_mel(wave, mc).bins
    return crop_mel_frames(mel, cfg.audio_patch[1])[:, : audio_frames(cfg)]


def encode_pair(model: AVModel, video: VideoClip, audio: AudioWave, force_gate: float | None = None):
    """Encode one aligned clip.  Returns (z_v, z_a, q) without the batch axis."""
    cfg = model.cfg
    if model.has_video and model.has_audio:
        span_v = video.frames.shape[1] / video.fps
        hop = cfg.hop_ms / 1000.0
        if abs(span_v - audio.duration) > max(hop, 1.0 / video.fps):
            raise ValueError(f"video span {span_v:.3f}s and audio {audio.duration:.3f}s are not aligned")
    vid = video.frames[None] if model.has_video else None
    mel = prepare_mel(audio, cfg)[None] if model.has_audio else None
    z_v, z_a, q = model.encode(vid, mel, force_gate=force_gate)
    return (z_v[0] if z_v is not None else None, z_a[0] if z_a is not None else None, q[0])
