"""Flat tensor archive used for checkpoints and raw video fixtures.

Layout (all integers little-endian)::

    8 bytes   magic  b"AVSTARC\\0"
    u32       format version
    u64       byte length of the JSON index
    ...       JSON index: {"meta": {...}, "entries": [{"name", "shape", "offset", "count"}]}
    ...       payload: float32 little-endian values, entries back to back in index order

``offset`` and ``count`` are in scalars, relative to the payload start.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"AVSTARC\x00"
VERSION = 1
_F32 = np.dtype("<f4")


class ArchiveError(ValueError):
    pass


def save_archive(path: str | Path, tensors: Mapping[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        flat = np.ascontiguousarray(arr, dtype=_F32).reshape(-1)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(flat.size)})
        offset += flat.size
        blobs.append(flat.tobytes())
    index = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(index)))
        fh.write(index)
        for blob in blobs:
            fh.write(blob)


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ArchiveError(f"{path}: bad magic header")
    version, n_index = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    start = 8 + struct.calcsize("<IQ")
    index = json.loads(raw[start:start + n_index].decode("utf-8"))
    payload = np.frombuffer(raw, dtype=_F32, offset=start + n_index)
    out = {}
    for e in index["entries"]:
        chunk = payload[e["offset"]:e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ArchiveError(f"{path}: truncated entry '{e['name']}'")
        out[e["name"]] = chunk.reshape(e["shape"]).copy()
    return out, index["meta"]


def archive_scalar_count(path: str | Path) -> int:
    tensors, _ = load_archive(path)
    return int(sum(a.size for a in tensors.values()))


def save_model(path: str | Path, model, meta: dict[str, Any] | None = None) -> None:
    from .config import to_dict

    info = {"model_config": to_dict(model.cfg)}
    info.update(meta or {})
    save_archive(path, model.state_dict(), info)


def load_model(path: str | Path):
    from .backbones import AVModel
    from .config import model_config_from_dict

    tensors, meta = load_archive(path)
    cfg = model_config_from_dict(meta["model_config"])
    model = AVModel(cfg, 0)
    model.load_state_dict(tensors)
    return model, meta
