"""Log-mel frontend: Hann-windowed STFT, triangular HTK-mel filterbank, floored log."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR_POWER = 1e-10


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_mels: int = 128
    win_ms: float = 40.0
    hop_ms: float = 10.0

    @property
    def win_samples(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_fft(self) -> int:
        return 1 << (self.win_samples - 1).bit_length()

    def num_frames(self, n_samples: int) -> int:
        return (n_samples - self.win_samples) // self.hop_samples + 1


@dataclass
class AudioWave:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    bins: np.ndarray  # (n_mels, frames)
    config: MelConfig = field(default_factory=MelConfig)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """n_mels + 2 edge frequencies (Hz), equally spaced on the mel scale from 0 to Nyquist."""
    top = hz_to_mel(cfg.sample_rate / 2.0)
    return mel_to_hz(np.linspace(0.0, top, cfg.n_mels + 2))


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    return mel_band_edges(cfg)[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular weights, peak 1 at each band center."""
    edges = mel_band_edges(cfg)
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None, :] - lo) / (mid - lo)
    fall = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


def log_mel(wave: AudioWave, cfg: MelConfig | None = None) -> MelSpectrogram:
    cfg = cfg or MelConfig()
    if wave.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample rate {wave.sample_rate} Hz != frontend rate {cfg.sample_rate} Hz; resample first")
    x = np.asarray(wave.samples, dtype=np.float64).reshape(-1)
    win, hop = cfg.win_samples, cfg.hop_samples
    if len(x) < win:
        raise ValueError(f"clip of {len(x)} samples is shorter than one {win}-sample window")
    n_frames = cfg.num_frames(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.fft.rfft(frames * np.hanning(win + 1)[:-1], n=cfg.n_fft, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = mel_filterbank(cfg) @ power.T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR_POWER)), cfg)
