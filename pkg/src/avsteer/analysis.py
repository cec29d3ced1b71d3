"""Classification metrics, prediction-flip tables and McNemar's test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

CLASS_NAMES = {1: "violent", 0: "nonviolent"}


def _as_binary(x, name: str) -> np.ndarray:
    a = np.asarray(x).astype(np.int64).ravel()
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1")
    return a


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    # A class that is absent and never predicted has no errors to score.
    return 1.0 if denom == 0 else 2 * tp / denom


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    f1_violent: float
    f1_nonviolent: float
    macro_f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self) | {"n": self.n}

    def text(self) -> str:
        rows = [("accuracy", self.accuracy), ("f1_violent", self.f1_violent),
                ("f1_nonviolent", self.f1_nonviolent), ("macro_f1", self.macro_f1)]
        lines = [f"{k:<14}{v * 100:8.2f}%" for k, v in rows]
        lines.append(f"{'confusion':<14}tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}  (n={self.n})")
        return "\n".join(lines)


def eval_report(preds, labels) -> EvalReport:
    """Metrics with violent (1) as the positive class."""
    p, y = _as_binary(preds, "preds"), _as_binary(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if y.size == 0:
        raise ValueError("cannot evaluate an empty set")
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    f1_v = _f1(tp, fp, fn)
    f1_nv = _f1(tn, fn, fp)
    return EvalReport((tp + tn) / y.size, f1_v, f1_nv, (f1_v + f1_nv) / 2, tp, fp, tn, fn)


def predictions_from_logits(logits) -> np.ndarray:
    """Fixed threshold at logit 0."""
    return (np.asarray(logits) > 0).astype(np.int64)


@dataclass(frozen=True)
class FlipCells:
    helps: int
    hurts: int
    both_correct: int
    both_wrong: int

    @property
    def n(self) -> int:
        return self.helps + self.hurts + self.both_correct + self.both_wrong


@dataclass(frozen=True)
class FlipTable(FlipCells):
    per_class: dict = field(default_factory=dict)

    @property
    def accuracy_video(self) -> float:
        return (self.both_correct + self.hurts) / self.n

    @property
    def accuracy_av(self) -> float:
        return (self.both_correct + self.helps) / self.n

    @classmethod
    def from_cells(cls, helps, hurts, both_correct, both_wrong, per_class=None) -> "FlipTable":
        return cls(int(helps), int(hurts), int(both_correct), int(both_wrong), dict(per_class or {}))

    def to_dict(self) -> dict:
        return {
            "helps": self.helps, "hurts": self.hurts, "both_correct": self.both_correct,
            "both_wrong": self.both_wrong, "n": self.n,
            "accuracy_video": self.accuracy_video, "accuracy_av": self.accuracy_av,
            "per_class": {k: asdict(v) for k, v in self.per_class.items()},
        }

    def text(self) -> str:
        head = f"{'class':<12}{'helps':>7}{'hurts':>7}{'both_ok':>9}{'both_bad':>10}{'n':>7}"
        lines = [head]
        rows = list(self.per_class.items()) + [("all", self)]
        for name, c in rows:
            lines.append(f"{name:<12}{c.helps:>7}{c.hurts:>7}{c.both_correct:>9}{c.both_wrong:>10}{c.n:>7}")
        lines.append(f"video-only accuracy {self.accuracy_video * 100:.2f}%   "
                     f"audio-visual accuracy {self.accuracy_av * 100:.2f}%")
        return "\n".join(lines)


def _cells(v_ok: np.ndarray, av_ok: np.ndarray) -> FlipCells:
    return FlipCells(int((~v_ok & av_ok).sum()), int((v_ok & ~av_ok).sum()),
                     int((v_ok & av_ok).sum()), int((~v_ok & ~av_ok).sum()))


def flip_analysis(preds_video_only, preds_av, labels) -> FlipTable:
    pv = _as_binary(preds_video_only, "preds_video_only")
    pa = _as_binary(preds_av, "preds_av")
    y = _as_binary(labels, "labels")
    if not (pv.size == pa.size == y.size):
        raise ValueError(f"length mismatch: {pv.size}, {pa.size}, {y.size}")
    if y.size == 0:
        raise ValueError("cannot analyse an empty set")
    v_ok, av_ok = pv == y, pa == y
    per_class = {CLASS_NAMES[c]: _cells(v_ok[y == c], av_ok[y == c]) for c in (1, 0) if (y == c).any()}
    total = _cells(v_ok, av_ok)
    return FlipTable(total.helps, total.hurts, total.both_correct, total.both_wrong, per_class)


@dataclass(frozen=True)
class McNemarResult:
    helps: int
    hurts: int
    chi2: float | None
    p_value: float | None

    @property
    def applicable(self) -> bool:
        return self.chi2 is not None

    def to_dict(self) -> dict:
        return asdict(self) | {"applicable": self.applicable}

    def text(self) -> str:
        if not self.applicable:
            return f"McNemar helps={self.helps} hurts={self.hurts}: not applicable (no discordant pairs)"
        return (f"McNemar helps={self.helps} hurts={self.hurts}: "
                f"chi2={self.chi2:.4f}  p={self.p_value:.4e}")


def mcnemar(helps: int, hurts: int) -> McNemarResult:
    """Continuity-corrected McNemar statistic and its 1-dof chi-square p-value."""
    b, c = int(helps), int(hurts)
    if b < 0 or c < 0:
        raise ValueError("counts must be non-negative")
    if b + c == 0:
        return McNemarResult(b, c, None, None)
    diff = max(abs(b - c) - 1, 0)
    chi2 = diff * diff / (b + c)
    return McNemarResult(b, c, chi2, math.erfc(math.sqrt(chi2 / 2.0)))
