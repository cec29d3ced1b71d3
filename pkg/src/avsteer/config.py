"""Configuration dataclasses and TOML loading.

Config files are TOML with one table per section::

    [model]
    depth = 4
    d_video = 64

    [model.steering]
    mode = "conditional_lora"
    direction = "video_to_audio"
    gate = true
    rank = 8
    alpha = 2.0

    [train]
    lr = 1e-4
    lam = 0.4

    [train.augment]
    spec_augment = true

    [synth]
    n_clips = 512

Every key is optional; omitted keys keep the defaults below.  Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

STEERING_MODES = ("conditional_lora", "static_lora", "film", "cross_attention", "feature_fusion")
DIRECTIONS = ("video_to_audio", "audio_to_video", "crisscross")
FUSION_OPS = ("add", "concat")
SCHEDULES = ("early", "late", "continuous")
MODALITIES = ("av", "video", "audio")


class ConfigError(ValueError):
    pass


@dataclass
class SteeringConfig:
    mode: str = "conditional_lora"
    direction: str = "video_to_audio"
    gate: bool = True
    rank: int = 8
    alpha: float = 2.0
    rank_dt: int = 8
    alpha_dt: float = 2.0
    fusion_op: str = "concat"       # feature_fusion only
    schedule: str = "continuous"


@dataclass
class ModelConfig:
    depth: int = 4
    audio_depth: int | None = None  # None: same as depth
    d_video: int = 64
    d_audio: int = 64
    state_dim: int = 8
    expand: int = 2
    dt_rank: int = 0                # 0: ceil(d_model / 16)
    conv_kernel: int = 4
    dt_min: float = 1e-3            # step-size init range (log-uniform)
    dt_max: float = 0.1
    frames: int = 8
    image_size: int = 64
    video_patch: int = 16
    sample_rate: int = 16000
    audio_seconds: float = 1.0
    n_mels: int = 128
    win_ms: float = 40.0
    hop_ms: float = 10.0
    audio_patch: tuple[int, int] = (16, 16)  # (mel bins, frames)
    mel_mean: float = 0.0
    mel_std: float = 1.0
    shared_dim: int = 64
    modality: str = "av"
    dtype: str = "float64"
    steering: SteeringConfig = field(default_factory=SteeringConfig)

    def dt_rank_for(self, d_model: int) -> int:
        return self.dt_rank if self.dt_rank > 0 else math.ceil(d_model / 16)

    @property
    def depth_audio(self) -> int:
        return self.depth if self.audio_depth is None else self.audio_depth


@dataclass
class AugmentConfig:
    spec_augment: bool = True
    time_masks: int = 2
    max_time_width: int = 20
    freq_masks: int = 2
    max_freq_width: int = 8
    noise: bool = False
    noise_std: float = 0.1          # in log-mel units
    gain: bool = False
    max_gain_db: float = 6.0
    speed: bool = False
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    time_shift: bool = False        # circular roll of the time axis


@dataclass
class TrainConfig:
    epochs: int = 60
    warmup_epochs: int = 5
    lr: float = 1e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    lam: float = 0.4
    grad_clip: float | None = None
    val_fraction: float = 0.15
    test_fraction: float = 0.25
    rho_init: float = math.log(1.0 / 0.07)
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class SynthConfig:
    n_clips: int = 512
    frames: int = 8
    image_size: int = 64
    audio_seconds: float = 1.0
    sample_rate: int = 16000
    cue_strength: float = 0.9
    visual_ambiguity: float = 0.5
    noise_std: float = 0.05
    violent_fraction: float = 0.5
    burst_in_clear_violent: float = 0.5
    seed: int = 0


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


def paper_scale_model() -> ModelConfig:
    """Deployment-scale preset (32 layers of width 576, 64 frames at 224^2).

    Accepted by the loader and by cost accounting; far too large to train here.
    """
    return ModelConfig(depth=32, d_video=576, d_audio=576, state_dim=16, frames=64, image_size=224,
                       video_patch=16, audio_seconds=10.24, shared_dim=256, dtype="float32")


def planted_cue_experiment() -> ExperimentConfig:
    """Small float32 setup that trains in a couple of minutes per run on one CPU core.

    Used for the audio-helps-when-vision-is-ambiguous experiment.
    """
    model = ModelConfig(depth=2, d_video=32, d_audio=32, frames=4, image_size=32, n_mels=32,
                        audio_patch=(16, 16), shared_dim=32, dtype="float32")
    train = TrainConfig(epochs=30, warmup_epochs=2, lr=2e-3, augment=AugmentConfig(time_shift=True))
    return ExperimentConfig(model=model, train=train, synth=SynthConfig(n_clips=512))


PRESETS = {"paper": lambda: ExperimentConfig(model=paper_scale_model()), "planted_cue": planted_cue_experiment}


def _build(cls, data: dict[str, Any], path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a table, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"{path}: unknown key '{key}'")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{path}.{key}")
        elif isinstance(default, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    m, s = cfg.model, cfg.model.steering
    if s.mode not in STEERING_MODES:
        raise ConfigError(f"unknown steering mode '{s.mode}'; expected one of {STEERING_MODES}")
    if s.direction not in DIRECTIONS:
        raise ConfigError(f"unknown steering direction '{s.direction}'; expected one of {DIRECTIONS}")
    if s.fusion_op not in FUSION_OPS:
        raise ConfigError(f"unknown fusion op '{s.fusion_op}'")
    if s.schedule not in SCHEDULES:
        raise ConfigError(f"unknown fusion schedule '{s.schedule}'")
    if m.modality not in MODALITIES:
        raise ConfigError(f"unknown modality '{m.modality}'")
    if m.dtype not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got '{m.dtype}'")
    if cfg.train.lam < 0:
        raise ConfigError("lam must be non-negative")
    return cfg


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data, "config"))


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return from_dict(_apply_preset(data))


def _apply_preset(data: dict[str, Any]) -> dict[str, Any]:
    """Overlay file sections onto a named preset (``preset = "paper"`` or ``"planted_cue"``)."""
    if "preset" not in data:
        return data
    data = dict(data)
    name = data.pop("preset")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; expected one of {sorted(PRESETS)}")
    base = to_dict(PRESETS[name]())
    for section, values in data.items():
        if isinstance(values, dict) and isinstance(base.get(section), dict):
            _merge(base[section], values)
        else:
            base[section] = values
    return base


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def to_dict(cfg) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def model_config_from_dict(data: dict[str, Any]) -> ModelConfig:
    return _build(ModelConfig, data, "model")
