"""Shared toy configurations and inputs."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from avsteer.backbones import AVModel, audio_frames
from avsteer.config import ModelConfig, SteeringConfig


def toy_config(**overrides) -> ModelConfig:
    steering = overrides.pop("steering", SteeringConfig())
    cfg = ModelConfig(depth=2, d_video=16, d_audio=16, state_dim=4, frames=4, image_size=32, video_patch=16,
                      n_mels=32, audio_patch=(16, 16), shared_dim=8, dtype="float64", steering=steering)
    return replace(cfg, **overrides)


def toy_inputs(cfg: ModelConfig, batch: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    video = rng.uniform(0, 1, (batch, 3, cfg.frames, cfg.image_size, cfg.image_size))
    mel = rng.normal(size=(batch, cfg.n_mels, audio_frames(cfg)))
    labels = np.arange(batch) % 2
    return video, mel, labels


def activate_lora(model: AVModel, seed: int = 1, std: float = 0.1) -> None:
    """Give every zero-initialized up-projection factor random values so steering paths carry gradient."""
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        if name.endswith(".U"):
            p.data = rng.normal(0.0, std, p.shape).astype(p.dtype)


FIXTURE_ANNOTATIONS = Path(__file__).parent / "fixtures" / "annotations"


def write_fixture_media(directory: Path, sample_rate: int = 16000) -> Path:
    """Source audio tracks for the annotation fixtures, one behaviour per camera.

    cam02 has no track (no stream); cam03 is digital silence; cam04 peaks at
    -90 dBFS; cam06 is silent for its first 5 s; cam08 peaks at -70 dBFS.
    """
    from avsteer.data.media import write_wav

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)
    durations = {"cam01": 10, "cam03": 12, "cam04": 20, "cam05": 8, "cam06": 16, "cam07": 9, "cam08": 14}
    for vid, dur in durations.items():
        n = dur * sample_rate
        x = np.clip(rng.normal(0, 0.2, n), -0.99, 0.99)
        if vid == "cam03":
            x = np.zeros(n)
        elif vid == "cam04":
            x = 10 ** (-90 / 20) * np.sin(np.arange(n) * 0.05)
        elif vid == "cam06":
            x[: 5 * sample_rate] = 0.0
        elif vid == "cam08":
            x = 10 ** (-70 / 20) * np.sin(np.arange(n) * 0.05)
        write_wav(directory / f"{vid}.wav", x, sample_rate)
    return directory


# "PASS name" / "FAIL name" lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []
