"""Temporal annotations, clip records and run segmentation.

Annotation files hold one JSON document per source video::

    {"video_id": "cam01_0007", "duration_s": 42.0,
     "violent_intervals": [[3.5, 9.0], [20.0, 24.25]]}

Intervals are sorted, non-overlapping (touching is allowed) and lie within
``[0, duration_s]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

MIN_CLIP_S = 1.0
_EPS = 1e-9

VIOLENT = "violent"
NONVIOLENT = "nonviolent"
AUDIO_STATUSES = ("ok", "no_stream", "silent", "excluded_manual")


class MalformedIntervalError(ValueError):
    pass


@dataclass
class TemporalAnnotation:
    video_id: str
    duration_s: float
    violent_intervals: list[tuple[float, float]] = field(default_factory=list)

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise MalformedIntervalError(f"{self.video_id}: non-positive duration {self.duration_s}")
        prev_end = 0.0
        for pair in self.violent_intervals:
            if len(pair) != 2:
                raise MalformedIntervalError(f"{self.video_id}: interval {pair!r} is not a (start, end) pair")
            s, e = float(pair[0]), float(pair[1])
            if not (0.0 - _EPS <= s < e <= self.duration_s + _EPS):
                raise MalformedIntervalError(
                    f"{self.video_id}: interval ({s}, {e}) outside [0, {self.duration_s}] or empty"
                )
            if s < prev_end - _EPS:
                raise MalformedIntervalError(f"{self.video_id}: interval ({s}, {e}) overlaps or is unsorted")
            prev_end = e

    @classmethod
    def from_dict(cls, data: dict) -> "TemporalAnnotation":
        ann = cls(str(data["video_id"]), float(data["duration_s"]),
                  [tuple(map(float, p)) for p in data.get("violent_intervals", [])])
        ann.validate()
        return ann


@dataclass
class ClipRecord:
    clip_id: str
    video_id: str
    start_s: float
    end_s: float
    label: str
    audio_status: str | None = None   # None until stage-one filtering has run
    peak_db: float | None = None
    split: str | None = None

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def target(self) -> int:
        return 1 if self.label == VIOLENT else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ClipRecord":
        return cls(**data)


def load_annotations(directory: str | Path) -> list[TemporalAnnotation]:
    """Every ``*.json`` under ``directory``, in file-name order."""
    out = []
    for path in sorted(Path(directory).glob("*.json")):
        out.append(TemporalAnnotation.from_dict(json.loads(path.read_text())))
    return out


def partition_timeline(ann: TemporalAnnotation) -> list[tuple[float, float, str]]:
    """Maximal alternating runs covering [0, duration] exactly."""
    ann.validate()
    merged: list[list[float]] = []
    for s, e in ann.violent_intervals:
        if merged and s <= merged[-1][1] + _EPS:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    runs = []
    cursor = 0.0
    for s, e in merged:
        if s > cursor + _EPS:
            runs.append((cursor, s, NONVIOLENT))
            cursor = s
        # sub-epsilon gaps snap to the previous boundary so runs tile exactly
        runs.append((cursor, e, VIOLENT))
        cursor = e
    if cursor < ann.duration_s - _EPS:
        runs.append((cursor, ann.duration_s, NONVIOLENT))
    elif runs:
        runs[-1] = (runs[-1][0], ann.duration_s, runs[-1][2])
    return runs


def segment_runs(ann: TemporalAnnotation, min_clip_s: float = MIN_CLIP_S) -> list[ClipRecord]:
    """One clip per maximal run lasting at least ``min_clip_s``; shorter runs are logged and dropped."""
    records = []
    for i, (s, e, label) in enumerate(partition_timeline(ann)):
        if e - s < min_clip_s - _EPS:
            logger.info("dropping %s run %s [%.3f, %.3f): %.3fs < %.3fs",
                        label, ann.video_id, s, e, e - s, min_clip_s)
            continue
        records.append(ClipRecord(f"{ann.video_id}__{i:03d}", ann.video_id, s, e, label))
    return records
