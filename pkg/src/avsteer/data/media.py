"""Wave I/O and the automatic (stage-one) audio filter.

Clip media live in a directory keyed by source video id: ``<video_id>.wav``
holds the source's audio track (16-bit PCM) and its absence means the source
has no audio stream.  Optional ``<video_id>.video`` files hold raw frames in
the tensor-archive format.  Stage two of the curation protocol (human review
of scene relevance) is represented only by an exclusion list file with one
clip id per line.
"""

from __future__ import annotations

import math
import wave
from dataclasses import replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .annotations import ClipRecord

SILENCE_THRESHOLD_DB = -80.0


class MediaError(IOError):
    pass


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """16-bit PCM wave -> (float samples in [-1, 1), sample rate); multichannel gives (n, ch)."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getsampwidth() != 2:
                raise MediaError(f"{path}: only 16-bit PCM is supported")
            ch, sr, n = wf.getnchannels(), wf.getframerate(), wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise MediaError(f"{path}: unreadable wave file ({exc})") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return (data.reshape(-1, ch) if ch > 1 else data), sr


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    x = np.asarray(samples, dtype=np.float64)
    ch = 1 if x.ndim == 1 else x.shape[1]
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(ch)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def mixdown(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return x.mean(axis=1) if x.ndim == 2 else x


def peak_dbfs(samples: np.ndarray) -> float:
    """Peak level of the mono mixdown relative to full scale; -inf for digital silence."""
    x = mixdown(samples)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    return 20.0 * math.log10(peak) if peak > 0 else -math.inf


def audio_filter_stage1(samples: np.ndarray | None,
                        threshold_db: float = SILENCE_THRESHOLD_DB) -> tuple[str, float | None]:
    """``None`` samples mean no embedded audio stream."""
    if samples is None:
        return "no_stream", None
    db = peak_dbfs(samples)
    return ("silent" if db < threshold_db else "ok"), db


def clip_samples(source: np.ndarray, sample_rate: int, start_s: float, end_s: float) -> np.ndarray:
    a = int(round(start_s * sample_rate))
    b = int(round(end_s * sample_rate))
    return source[a:b]


def filter_records(records: Iterable[ClipRecord], media_dir: str | Path,
                   threshold_db: float = SILENCE_THRESHOLD_DB) -> list[ClipRecord]:
    """Stage-one verdicts for each clip span of its source audio track."""
    media_dir = Path(media_dir)
    cache: dict[str, tuple[np.ndarray, int] | None] = {}
    out = []
    for rec in records:
        if rec.video_id not in cache:
            path = media_dir / f"{rec.video_id}.wav"
            cache[rec.video_id] = read_wav(path) if path.exists() else None
        src = cache[rec.video_id]
        samples = None if src is None else clip_samples(src[0], src[1], rec.start_s, rec.end_s)
        status, db = audio_filter_stage1(samples, threshold_db)
        out.append(replace(rec, audio_status=status, peak_db=db))
    return out


def read_exclusions(path: str | Path) -> set[str]:
    lines = Path(path).read_text().splitlines()
    return {ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")}


def apply_exclusions(records: Iterable[ClipRecord], excluded: set[str]) -> list[ClipRecord]:
    """Mark manually rejected clips; earlier automatic verdicts take precedence."""
    out = []
    for rec in records:
        if rec.clip_id in excluded and rec.audio_status == "ok":
            rec = replace(rec, audio_status="excluded_manual")
        out.append(rec)
    return out
