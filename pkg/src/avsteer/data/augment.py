"""Log-mel augmentation: SpecAugment masks plus optional gain, noise, speed and time-shift changes."""

from __future__ import annotations

import math

import numpy as np

from ..audio import MelSpectrogram
from ..config import AugmentConfig


def _masks(n: int, count: int, max_width: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    out = []
    for _ in range(count):
        w = int(rng.integers(0, min(max_width, n) + 1))
        start = int(rng.integers(0, n - w + 1))
        out.append((start, w))
    return out


def speed_perturb(bins: np.ndarray, factor: float) -> np.ndarray:
    """Resample the time axis by ``factor`` (>1 is faster), then crop or edge-pad to the original length."""
    F = bins.shape[1]
    if factor == 1.0:
        return bins
    n_new = max(1, int(round(F / factor)))
    src = np.linspace(0, F - 1, n_new)
    res = np.stack([np.interp(src, np.arange(F), row) for row in bins])
    if n_new >= F:
        return res[:, :F]
    return np.concatenate([res, np.repeat(res[:, -1:], F - n_new, axis=1)], axis=1)


def spec_augment(mel, rng: np.random.Generator, cfg: AugmentConfig | None = None):
    """Return an augmented copy of ``mel`` (MelSpectrogram or (n_mels, frames) array)."""
    cfg = cfg or AugmentConfig()
    wrapped = isinstance(mel, MelSpectrogram)
    x = np.array(mel.bins if wrapped else mel, dtype=np.float64, copy=True)
    n_mels, n_frames = x.shape

    if cfg.speed:
        x = speed_perturb(x, float(rng.choice(cfg.speed_factors)))
    if cfg.time_shift:
        x = np.roll(x, int(rng.integers(0, x.shape[1])), axis=1)
    if cfg.gain:
        db = rng.uniform(-cfg.max_gain_db, cfg.max_gain_db)
        x = x + db * math.log(10.0) / 10.0  # power gain in natural-log units
    if cfg.noise:
        x = x + rng.normal(0.0, cfg.noise_std, x.shape)
    if cfg.spec_augment:
        fill = x.mean()
        for start, w in _masks(n_frames, cfg.time_masks, cfg.max_time_width, rng):
            x[:, start:start + w] = fill
        for start, w in _masks(n_mels, cfg.freq_masks, cfg.max_freq_width, rng):
            x[start:start + w, :] = fill

    x = x.astype(np.asarray(mel.bins if wrapped else mel).dtype)
    return MelSpectrogram(x, mel.config) if wrapped else x
