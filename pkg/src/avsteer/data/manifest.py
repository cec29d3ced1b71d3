"""JSON-lines clip manifests.

The first line is a header ``{"format": "avsteer-clip-manifest", "version": 1}``;
every following line is one ClipRecord with fields in a fixed order:
clip_id, video_id, start_s, end_s, label, audio_status, peak_db, split.
``peak_db`` is null when there is no stream or the clip is digitally silent.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

from .annotations import ClipRecord

FORMAT = "avsteer-clip-manifest"
VERSION = 1


class ManifestError(ValueError):
    pass


def _encode(rec: ClipRecord) -> str:
    d = rec.to_dict()
    if d["peak_db"] is not None and not math.isfinite(d["peak_db"]):
        d["peak_db"] = None
    return json.dumps(d, allow_nan=False)


def write_manifest(path: str | Path, records: Iterable[ClipRecord]) -> None:
    lines = [json.dumps({"format": FORMAT, "version": VERSION})]
    lines.extend(_encode(r) for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> list[ClipRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT:
        raise ManifestError(f"{path}: not a clip manifest")
    if header.get("version") != VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {header.get('version')}")
    return [ClipRecord.from_dict(json.loads(ln)) for ln in lines[1:] if ln.strip()]


def training_records(records: Iterable[ClipRecord], split: str | None = "train") -> list[ClipRecord]:
    """Clips eligible for model input: audio verdict ``ok`` (and the requested split)."""
    return [r for r in records if r.audio_status == "ok" and (split is None or r.split == split)]
