"""Planted-cue paired audio-video clips.

Three templates:

* nonviolent: two blobs drifting slowly, pink-noise audio;
* clear violent: two bright blobs rushing together with a flash on impact,
  and (with some probability) an impact burst in the audio;
* ambiguous violent: motion drawn from the nonviolent generator, audio with an
  impact burst (damped chirp) of amplitude ``cue_strength``.

Ambiguous clips can only be recognized by hearing the burst, which makes the
label depend on audio read in visual context.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..checkpoint import load_archive, save_archive
from ..config import SynthConfig
from .annotations import NONVIOLENT, VIOLENT, ClipRecord
from .manifest import read_manifest, write_manifest
from .media import audio_filter_stage1, read_wav, write_wav

TEMPLATES = ("nonviolent", "clear", "ambiguous")
BURST_SECONDS = 0.2


@dataclass
class SynthDataset:
    videos: np.ndarray      # (n, 3, T, H, W) float32 in [0, 1]
    audio: np.ndarray       # (n, samples) float32 in [-1, 1]
    labels: np.ndarray      # (n,) int, 1 = violent
    templates: np.ndarray   # (n,) str
    has_burst: np.ndarray   # (n,) bool
    sample_rate: int
    fps: float

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "SynthDataset":
        idx = np.asarray(idx)
        return SynthDataset(self.videos[idx], self.audio[idx], self.labels[idx], self.templates[idx],
                            self.has_burst[idx], self.sample_rate, self.fps)


def pink_noise(n: int, rng: np.random.Generator, std: float) -> np.ndarray:
    """1/f-power noise scaled to the requested standard deviation."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    x -= x.mean()
    sd = x.std()
    return x * (std / sd) if sd > 0 else x


def impact_burst(sample_rate: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    """Exponentially damped upward chirp, peak magnitude ``amplitude``."""
    n = int(BURST_SECONDS * sample_rate)
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(400.0, 900.0)
    f1 = rng.uniform(1800.0, 3000.0)
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / BURST_SECONDS * t * t)
    env = np.exp(-t / rng.uniform(0.04, 0.07))
    burst = env * np.sin(phase)
    return amplitude * burst / np.max(np.abs(burst))


def _render(centers: np.ndarray, colors: np.ndarray, size: int, sigma: float, brightness: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
    """centers: (T, k, 2) pixel coords; colors: (k, 3); brightness: (T,) -> (3, T, H, W)."""
    Tn = centers.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = np.full((3, Tn, size, size), 0.1)
    for t in range(Tn):
        for k in range(centers.shape[1]):
            cy, cx = centers[t, k]
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
            frames[:, t] += colors[k][:, None, None] * blob[None] * brightness[t]
    frames += rng.normal(0.0, 0.02, frames.shape)
    return np.clip(frames, 0.0, 1.0)


def _calm_motion(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    S, Tn = cfg.image_size, cfg.frames
    scale = S / 32.0
    frames = []
    start = rng.uniform(0.2 * S, 0.8 * S, (2, 2))
    angle = rng.uniform(0, 2 * np.pi, 2)
    speed = rng.uniform(0.3, 1.0, 2) * scale
    vel = np.stack([np.sin(angle), np.cos(angle)], axis=-1) * speed[:, None]
    for t in range(Tn):
        frames.append(np.clip(start + vel * t, 0, S - 1))
    colors = rng.uniform(0.3, 0.6, (2, 3))
    return _render(np.array(frames), colors, S, 0.12 * S, np.ones(Tn), rng)


def _collision(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    S, Tn = cfg.image_size, cfg.frames
    meet = rng.uniform(0.35 * S, 0.65 * S, 2)
    angle = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.sin(angle), np.cos(angle)])
    impact = Tn // 2
    speed = rng.uniform(3.0, 5.0) * S / 32.0
    frames = []
    for t in range(Tn):
        off = max(impact - t, 0) * speed
        jitter = rng.normal(0, 0.05 * S, (2, 2)) if t >= impact else np.zeros((2, 2))
        pts = np.stack([meet + direction * off, meet - direction * off]) + jitter
        frames.append(np.clip(pts, 0, S - 1))
    colors = rng.uniform(0.6, 0.9, (2, 3))
    brightness = np.ones(Tn)
    brightness[impact:] = 1.6
    video = _render(np.array(frames), colors, S, 0.12 * S, brightness, rng)
    video[:, impact] = np.clip(video[:, impact] + 0.3, 0.0, 1.0)
    return video


def _audio(cfg: SynthConfig, rng: np.random.Generator, burst: bool) -> np.ndarray:
    n = int(round(cfg.audio_seconds * cfg.sample_rate))
    x = pink_noise(n, rng, cfg.noise_std)
    if burst and cfg.cue_strength > 0:
        b = impact_burst(cfg.sample_rate, rng, cfg.cue_strength)
        onset = rng.integers(int(0.05 * n), max(int(0.05 * n) + 1, n - b.size - int(0.05 * n)))
        x[onset:onset + b.size] += b[: n - onset]
    return np.clip(x, -1.0, 1.0)


def template_plan(cfg: SynthConfig) -> np.ndarray:
    """Exact template counts, shuffled deterministically."""
    n_violent = int(round(cfg.n_clips * cfg.violent_fraction))
    n_ambiguous = int(round(n_violent * cfg.visual_ambiguity))
    plan = np.array(["nonviolent"] * (cfg.n_clips - n_violent) + ["clear"] * (n_violent - n_ambiguous)
                    + ["ambiguous"] * n_ambiguous)
    return plan[np.random.default_rng(cfg.seed).permutation(cfg.n_clips)]


def generate_clip(cfg: SynthConfig, template: str, rng: np.random.Generator):
    if template == "clear":
        video = _collision(cfg, rng)
        burst = bool(rng.random() < cfg.burst_in_clear_violent)
    else:
        video = _calm_motion(cfg, rng)
        burst = template == "ambiguous"
    return video, _audio(cfg, rng, burst), burst


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    plan = template_plan(cfg)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_clips)
    videos, audio, bursts = [], [], []
    for template, seq in zip(plan, children):
        v, a, b = generate_clip(cfg, template, np.random.default_rng(seq))
        videos.append(v)
        audio.append(a)
        bursts.append(b)
    return SynthDataset(
        videos=np.stack(videos).astype(np.float32),
        audio=np.stack(audio).astype(np.float32),
        labels=(plan != "nonviolent").astype(np.int64),
        templates=plan,
        has_burst=np.array(bursts),
        sample_rate=cfg.sample_rate,
        fps=cfg.frames / cfg.audio_seconds,
    )


def save_dataset(ds: SynthDataset, cfg: SynthConfig, out_dir: str | Path) -> None:
    """Write videos.avst, audio/<clip>.wav, manifest.jsonl and synth.json."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    save_archive(out / "videos.avst", {"videos": ds.videos}, {"fps": ds.fps})
    records = []
    dur = ds.audio.shape[1] / ds.sample_rate
    for i in range(len(ds)):
        cid = f"synth_{i:05d}"
        write_wav(out / "audio" / f"{cid}.wav", ds.audio[i], ds.sample_rate)
        status, db = audio_filter_stage1(ds.audio[i])
        records.append(ClipRecord(cid, cid, 0.0, dur, VIOLENT if ds.labels[i] else NONVIOLENT, status, db))
    write_manifest(out / "manifest.jsonl", records)
    meta = {"config": asdict(cfg), "templates": ds.templates.tolist(), "has_burst": ds.has_burst.tolist()}
    (out / "synth.json").write_text(json.dumps(meta, indent=1))


def load_dataset(directory: str | Path) -> SynthDataset:
    d = Path(directory)
    tensors, meta = load_archive(d / "videos.avst")
    records = read_manifest(d / "manifest.jsonl")
    info = json.loads((d / "synth.json").read_text())
    audio, sr = [], None
    for rec in records:
        x, sr = read_wav(d / "audio" / f"{rec.clip_id}.wav")
        audio.append(x)
    return SynthDataset(
        videos=tensors["videos"],
        audio=np.stack(audio).astype(np.float32),
        labels=np.array([r.target for r in records]),
        templates=np.array(info["templates"]),
        has_burst=np.array(info["has_burst"]),
        sample_rate=int(sr),
        fps=float(meta["fps"]),
    )
