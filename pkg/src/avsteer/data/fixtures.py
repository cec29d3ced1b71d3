"""Manifest fixtures shaped like the two audio-filtered benchmarks.

Only the clip counts are real (per split and class); source-video grouping and
timings are generated.  They exist to exercise grouped stratified splitting at
realistic sizes.
"""

from __future__ import annotations

import numpy as np

from .annotations import NONVIOLENT, VIOLENT, ClipRecord

# (train, test) clip counts per class after segmentation and audio filtering
BENCHMARK_SPLITS = {
    "ntu_cctv": {VIOLENT: (1502, 507), NONVIOLENT: (2026, 680)},
    "dvd": {VIOLENT: (698, 260), NONVIOLENT: (965, 322)},
}
SOURCE_VIDEOS = {"ntu_cctv": 1000, "dvd": 500}


def benchmark_fixture(name: str, seed: int = 0) -> list[ClipRecord]:
    counts = BENCHMARK_SPLITS[name]
    n_videos = SOURCE_VIDEOS[name]
    rng = np.random.default_rng(seed)
    owners = {lab: rng.integers(0, n_videos, size=sum(c)) for lab, c in counts.items()}
    records = []
    for vid in range(n_videos):
        t = 0.0
        k = 0
        for lab in (VIOLENT, NONVIOLENT):
            for _ in range(int((owners[lab] == vid).sum())):
                dur = float(rng.uniform(1.0, 30.0))
                records.append(ClipRecord(f"{name}_{vid:04d}__{k:03d}", f"{name}_{vid:04d}", round(t, 3),
                                          round(t + dur, 3), lab, audio_status="ok"))
                t += dur
                k += 1
    return records


def benchmark_ratios(name: str) -> dict[str, tuple[int, int]]:
    """Per-class split ratios that reproduce the published per-split counts."""
    return dict(BENCHMARK_SPLITS[name])
