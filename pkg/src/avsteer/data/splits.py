"""Source-grouped, class-stratified train/test splitting."""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotations import ClipRecord


class StratificationWarning(UserWarning):
    pass


def apportion(total: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder integer split of ``total`` proportional to ``ratios``."""
    r = np.asarray(ratios, dtype=np.float64)
    if np.any(r < 0) or r.sum() <= 0:
        raise ValueError(f"invalid split ratios {list(ratios)}")
    exact = total * r / r.sum()
    base = np.floor(exact).astype(int)
    rest = total - base.sum()
    order = sorted(range(len(r)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base.tolist()


def make_splits(records: Iterable[ClipRecord],
                ratios: Sequence[float] | Mapping[str, Sequence[float]] = (0.75, 0.25),
                seed: int = 0,
                names: Sequence[str] = ("train", "test"),
                tolerance: float = 0.03) -> dict[str, list[ClipRecord]]:
    """Assign whole source videos to splits, matching per-class targets as closely as possible.

    ``ratios`` is either one sequence applied to every class or a mapping from
    label to per-class ratios.  Every clip of a source video lands in the same
    split.  A ``StratificationWarning`` reports achieved class ratios when a
    split deviates from the global class ratio by more than ``tolerance``.
    """
    records = list(records)
    for r in records:
        if not r.video_id:
            raise ValueError(f"clip {r.clip_id} has no source video id")
    labels = sorted({r.label for r in records})
    S, C = len(names), len(labels)
    li = {lab: i for i, lab in enumerate(labels)}

    class_totals = np.zeros(C, dtype=int)
    groups: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(C, dtype=int))
    for r in records:
        groups[r.video_id][li[r.label]] += 1
        class_totals[li[r.label]] += 1

    target = np.zeros((S, C), dtype=int)
    for lab, c in li.items():
        rc = ratios[lab] if isinstance(ratios, Mapping) else ratios
        if len(rc) != S:
            raise ValueError(f"{len(rc)} ratios for {S} splits")
        target[:, c] = apportion(int(class_totals[c]), rc)

    vids = sorted(groups)
    rng = np.random.default_rng(seed)
    shuffled = [vids[i] for i in rng.permutation(len(vids))]
    order = sorted(shuffled, key=lambda v: -int(groups[v].sum()))

    assigned = np.zeros((S, C), dtype=int)
    where: dict[str, int] = {}
    for vid in order:
        g = groups[vid]

        def score(s):
            over = np.maximum(assigned[s] + g - target[s], 0).sum()
            deficit = (target[s] - assigned[s]).clip(min=0).sum()
            return (over, -deficit, s)

        s = min(range(S), key=score)
        assigned[s] += g
        where[vid] = s

    _refine(groups, where, assigned, target)

    out: dict[str, list[ClipRecord]] = {n: [] for n in names}
    for r in records:
        name = names[where[r.video_id]]
        out[name].append(replace(r, split=name))
    _check_stratification(out, labels, class_totals, tolerance)
    return out


def _refine(groups, where, assigned, target, max_rounds: int = 200) -> None:
    """Single moves and pairwise swaps that lower the L1 distance to the targets."""
    S = assigned.shape[0]

    def err(a):
        return int(np.abs(a - target).sum())

    for _ in range(max_rounds):
        base = err(assigned)
        if base == 0:
            return
        improved = False
        # moves
        for vid in sorted(groups, key=lambda v: (groups[v].sum(), v)):
            s = where[vid]
            g = groups[vid]
            for t in range(S):
                if t == s:
                    continue
                trial = assigned.copy()
                trial[s] -= g
                trial[t] += g
                if err(trial) < base:
                    assigned[:] = trial
                    where[vid] = t
                    base = err(assigned)
                    improved = True
                    break
        if improved:
            continue
        # swaps between representatives of distinct count vectors
        reps: dict[tuple[int, tuple[int, ...]], str] = {}
        for vid in sorted(groups):
            reps.setdefault((where[vid], tuple(groups[vid])), vid)
        keys = sorted(reps)
        for i, (s, v) in enumerate(keys):
            for t, w in keys[i + 1:]:
                if s == t or v == w:
                    continue
                trial = assigned.copy()
                dv, dw = np.array(v), np.array(w)
                trial[s] += dw - dv
                trial[t] += dv - dw
                if err(trial) < base:
                    a, b = reps[(s, v)], reps[(t, w)]
                    where[a], where[b] = t, s
                    assigned[:] = trial
                    improved = True
                    break
            if improved:
                break
        if not improved:
            return


def _check_stratification(out, labels, class_totals, tolerance) -> None:
    total = class_totals.sum()
    if total == 0:
        return
    global_frac = class_totals / total
    achieved = {}
    bad = False
    for name, recs in out.items():
        n = len(recs)
        counts = np.array([sum(r.label == lab for r in recs) for lab in labels])
        frac = counts / n if n else np.full(len(labels), np.nan)
        achieved[name] = {lab: (round(float(f), 4) if n else None) for lab, f in zip(labels, frac)}
        if n == 0 or np.any(np.abs(frac - global_frac) > tolerance):
            bad = True
    if bad:
        warnings.warn(
            f"stratification outside tolerance {tolerance}: achieved class ratios {achieved}, "
            f"global {dict(zip(labels, np.round(global_frac, 4).tolist()))}",
            StratificationWarning,
            stacklevel=3,
        )
