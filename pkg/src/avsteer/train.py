"""AdamW training with warm-up plus cosine decay, evaluation, and ablation sweeps."""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .analysis import EvalReport, eval_report, predictions_from_logits
from .audio import AudioWave, MelConfig, log_mel
from .backbones import AVModel, audio_frames, crop_mel_frames
from .checkpoint import save_model
from .config import ExperimentConfig, ModelConfig, TrainConfig, to_dict, validate
from .data.augment import spec_augment
from .data.splits import make_splits
from .data.annotations import NONVIOLENT, VIOLENT, ClipRecord
from .data.synth import SynthDataset, synth_generate
from .objectives import av_infonce, bce_with_logits, total_loss

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


# ------------------------------------------------------------------------ data


@dataclass
class ArrayData:
    """Model-ready arrays: videos (n, 3, T, H, W), mels (n, n_mels, F), labels (n,)."""

    videos: np.ndarray
    mels: np.ndarray
    labels: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ArrayData":
        idx = np.asarray(idx, dtype=int)
        return ArrayData(self.videos[idx], self.mels[idx], self.labels[idx], [self.ids[i] for i in idx])


def mel_batch(audio: np.ndarray, sample_rate: int, cfg: ModelConfig) -> np.ndarray:
    mc = MelConfig(sample_rate, cfg.n_mels, cfg.win_ms, cfg.hop_ms)
    n = audio_frames(cfg)
    out = [crop_mel_frames(log_mel(AudioWave(x, sample_rate), mc).bins, cfg.audio_patch[1])[:, :n] for x in audio]
    return np.stack(out)


def prepare_synth(ds: SynthDataset, cfg: ModelConfig) -> ArrayData:
    if ds.videos.shape[2] != cfg.frames or ds.videos.shape[3] != cfg.image_size:
        raise ValueError(f"synthetic clips are {ds.videos.shape[2]}x{ds.videos.shape[3]}px, "
                         f"model expects {cfg.frames}x{cfg.image_size}px")
    dtype = np.dtype(cfg.dtype)
    mels = mel_batch(ds.audio, ds.sample_rate, cfg)
    ids = [f"synth_{i:05d}" for i in range(len(ds))]
    return ArrayData(ds.videos.astype(dtype), mels.astype(dtype), ds.labels.astype(np.int64), ids)


def split_indices(labels: np.ndarray, val_fraction: float, test_fraction: float, seed: int) -> dict[str, np.ndarray]:
    """Class-stratified train/val/test index sets (each clip is its own source video)."""
    train_fraction = 1.0 - val_fraction - test_fraction
    if train_fraction <= 0:
        raise ValueError("val_fraction + test_fraction must be below 1")
    recs = [ClipRecord(str(i), str(i), 0.0, 1.0, VIOLENT if y else NONVIOLENT) for i, y in enumerate(labels)]
    names = ("train", "val", "test")
    parts = make_splits(recs, (train_fraction, val_fraction, test_fraction), seed=seed, names=names)
    return {n: np.array(sorted(int(r.clip_id) for r in parts[n]), dtype=int) for n in names}


def mel_stats(mels: np.ndarray) -> tuple[float, float]:
    return float(mels.mean()), float(mels.std() + 1e-8)


# ------------------------------------------------------------------- optimizer


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warm-up to ``base_lr`` then cosine decay to zero; ``step`` counts from 0."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; vectors (norms, biases, rho) are not decayed."""

    def __init__(self, params: Sequence[T.Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.05):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.wd = lr, tuple(betas), eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.wd and p.data.ndim >= 2:
                update = update + self.wd * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)


def clip_gradients(params: Sequence[T.Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if norm > max_norm > 0:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (max_norm / norm)
    return norm


# ---------------------------------------------------------------------- losses


def batch_loss(model: AVModel, video, mel, labels, lam: float):
    z_v, z_a, q = model.encode(video if model.has_video else None, mel if model.has_audio else None)
    l_cls = bce_with_logits(q, labels)
    l_av = av_infonce(z_a, z_v, model.proj_heads) if model.proj_heads is not None else None
    return total_loss(l_cls, l_av, lam), l_cls, l_av, q


# -------------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: AVModel
    history: list[dict[str, Any]]
    best_epoch: int
    best_val_accuracy: float
    checkpoint: Path | None = None


def log_header(cfg: ExperimentConfig, seed: int) -> dict[str, Any]:
    t, s = cfg.train, cfg.model.steering
    return {
        "seed": seed, "lr": t.lr, "weight_decay": t.weight_decay, "warmup_epochs": t.warmup_epochs,
        "epochs": t.epochs, "lam": t.lam, "rank": s.rank, "alpha": s.alpha, "rank_dt": s.rank_dt,
        "alpha_dt": s.alpha_dt, "batch_size": t.batch_size, "modality": cfg.model.modality,
        "steering": s.mode, "direction": s.direction, "gate": s.gate,
    }


def predict_logits(model: AVModel, data: ArrayData, batch_size: int = 64) -> np.ndarray:
    out = []
    with T.no_grad():
        for i in range(0, len(data), batch_size):
            sl = slice(i, i + batch_size)
            _, _, q = model.encode(data.videos[sl] if model.has_video else None,
                                   data.mels[sl] if model.has_audio else None)
            out.append(q.data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: AVModel, data: ArrayData, batch_size: int = 64) -> EvalReport:
    if len(data) == 0:
        raise ValueError("evaluation set is empty")
    return eval_report(predictions_from_logits(predict_logits(model, data, batch_size)), data.labels)


def train(cfg: ExperimentConfig, train_data: ArrayData, val_data: ArrayData | None, seed: int = 0,
          out_dir: str | Path | None = None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train from scratch; keeps the weights with the best validation accuracy.

    Without a validation set the final epoch is kept.  When ``out_dir`` is
    given, writes ``train_log.jsonl`` (header line then one line per epoch)
    and ``checkpoint.avst``.
    """
    validate(cfg)
    tc: TrainConfig = cfg.train
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(seed)
    model = AVModel(cfg.model, np.random.default_rng([seed, 1]))
    params = model.parameters()
    opt = AdamW(params, tc.lr, tc.betas, tc.eps, tc.weight_decay)
    n = len(train_data)
    steps_per_epoch = max(1, n // tc.batch_size) if n >= tc.batch_size else 1
    total = steps_per_epoch * tc.epochs
    warm = steps_per_epoch * tc.warmup_epochs
    header = log_header(cfg, seed)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")
        log_fh.write(json.dumps({"header": header, "config": to_dict(cfg)}) + "\n")

    history: list[dict[str, Any]] = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    step = 0
    try:
        for epoch in range(tc.epochs):
            order = rng.permutation(n)
            sums = {"l_cls": 0.0, "l_av": 0.0, "l_total": 0.0}
            correct = seen = 0
            for b in range(steps_per_epoch):
                idx = order[b * tc.batch_size:(b + 1) * tc.batch_size] if n >= tc.batch_size else order
                video, labels = train_data.videos[idx], train_data.labels[idx]
                mel = train_data.mels[idx]
                if any((tc.augment.spec_augment, tc.augment.noise, tc.augment.gain, tc.augment.speed, tc.augment.time_shift)):
                    mel = np.stack([spec_augment(m, rng, tc.augment) for m in mel])
                loss, l_cls, l_av, q = batch_loss(model, video, mel, labels, tc.lam)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}: l_cls={float(l_cls.data)!r} "
                        f"l_av={None if l_av is None else float(l_av.data)!r} lr={lr_at(step, total, warm, tc.lr):.3e} "
                        f"batch={idx[:8].tolist()}..."
                    )
                model.zero_grad()
                T.backward(loss, params)
                if tc.grad_clip:
                    clip_gradients(params, tc.grad_clip)
                opt.step(lr_at(step, total, warm, tc.lr))
                if model.proj_heads is not None:
                    model.proj_heads.clamp_temperature()
                step += 1
                sums["l_cls"] += float(l_cls.data)
                sums["l_av"] += float(l_av.data) if l_av is not None else 0.0
                sums["l_total"] += float(loss.data)
                correct += int((predictions_from_logits(q.data) == labels).sum())
                seen += len(idx)
            row = {k: v / steps_per_epoch for k, v in sums.items()}
            row.update(epoch=epoch, lr=lr_at(step - 1, total, warm, tc.lr), train_accuracy=correct / seen,
                       tau=model.proj_heads.tau if model.proj_heads is not None else None)
            if val_data is not None and len(val_data):
                row["val_accuracy"] = evaluate(model, val_data).accuracy
                score = row["val_accuracy"]
            else:
                score = float(epoch)
            if score > best_acc:
                best_acc, best_epoch = score, epoch
                best_state = model.state_dict()
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(row)
            log.info("epoch %d %s", epoch, row)
    finally:
        if log_fh:
            log_fh.close()

    model.load_state_dict(best_state)
    ckpt = None
    if out is not None:
        ckpt = out / "checkpoint.avst"
        save_model(ckpt, model, {"best_epoch": best_epoch, "seed": seed, "header": header})
    val_best = best_acc if val_data is not None and len(val_data) else float("nan")
    return TrainResult(model, history, best_epoch, val_best, ckpt)


# ---------------------------------------------------------- synthetic pipeline


@dataclass
class SynthSplits:
    train: ArrayData
    val: ArrayData
    test: ArrayData
    templates: dict[str, np.ndarray]


def synth_config_for(cfg: ExperimentConfig, seed: int):
    """Synthetic-data settings with clip geometry taken from the model config."""
    return replace(cfg.synth, seed=seed, frames=cfg.model.frames, image_size=cfg.model.image_size,
                   audio_seconds=cfg.model.audio_seconds, sample_rate=cfg.model.sample_rate)


def synth_splits(cfg: ExperimentConfig, seed: int,
                 dataset: SynthDataset | None = None) -> tuple[ExperimentConfig, SynthSplits]:
    """Generate (or take), featurize and split the synthetic set.

    Mel normalization statistics come from the train split only; the returned
    config has ``mel_mean``/``mel_std`` filled in.
    """
    sc = synth_config_for(cfg, seed)
    ds = dataset if dataset is not None else synth_generate(sc)
    data = prepare_synth(ds, cfg.model)
    idx = split_indices(data.labels, cfg.train.val_fraction, cfg.train.test_fraction, seed)
    mean, std = mel_stats(data.mels[idx["train"]])
    cfg = replace(cfg, model=replace(cfg.model, mel_mean=mean, mel_std=std), synth=sc)
    parts = {k: data.subset(v) for k, v in idx.items()}
    return cfg, SynthSplits(parts["train"], parts["val"], parts["test"],
                            {k: ds.templates[v] for k, v in idx.items()})


@dataclass
class RunResult:
    seed: int
    test: EvalReport
    val_accuracy: float
    best_epoch: int
    test_logits: np.ndarray
    test_labels: np.ndarray
    test_templates: np.ndarray
    history: list[dict]
    checkpoint: Path | None = None


def run_synthetic(cfg: ExperimentConfig, seed: int, out_dir: str | Path | None = None,
                  dataset: SynthDataset | None = None) -> RunResult:
    """Train on the synthetic train split, select on val, report on test."""
    cfg, sp = synth_splits(cfg, seed, dataset)
    res = train(cfg, sp.train, sp.val, seed=seed, out_dir=out_dir)
    logits = predict_logits(res.model, sp.test)
    rep = eval_report(predictions_from_logits(logits), sp.test.labels)
    return RunResult(seed, rep, res.best_val_accuracy, res.best_epoch, logits, sp.test.labels,
                     sp.templates["test"], res.history, res.checkpoint)


# ---------------------------------------------------------------------- sweeps

SWEEP_KEYS = ("direction", "gate", "fusion_mode", "r", "alpha", "lam")


def apply_grid_point(cfg: ExperimentConfig, point: Mapping[str, Any]) -> ExperimentConfig:
    """Return ``cfg`` with one grid point applied.

    ``fusion_mode`` takes a steering mode name, ``video_only``/``audio_only``,
    or ``feature_fusion:<add|concat>:<early|late|continuous>``.
    """
    unknown = set(point) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unsupported grid keys {sorted(unknown)}; allowed {SWEEP_KEYS}")
    m, s, t = cfg.model, cfg.model.steering, cfg.train
    if "direction" in point:
        s = replace(s, direction=point["direction"])
    if "gate" in point:
        s = replace(s, gate=bool(point["gate"]))
    if "r" in point:
        s = replace(s, rank=int(point["r"]), rank_dt=int(point["r"]))
    if "alpha" in point:
        s = replace(s, alpha=float(point["alpha"]), alpha_dt=float(point["alpha"]))
    if "lam" in point:
        t = replace(t, lam=float(point["lam"]))
    if "fusion_mode" in point:
        fm = str(point["fusion_mode"])
        if fm in ("video_only", "audio_only"):
            m = replace(m, modality=fm.split("_")[0])
        elif fm.startswith("feature_fusion"):
            parts = fm.split(":")
            s = replace(s, mode="feature_fusion", fusion_op=parts[1] if len(parts) > 1 else s.fusion_op,
                        schedule=parts[2] if len(parts) > 2 else s.schedule)
        else:
            s = replace(s, mode=fm)
    return validate(replace(cfg, model=replace(m, steering=s), train=t))


def grid_points(grid: Mapping[str, Sequence[Any]]) -> list[dict[str, Any]]:
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def _sweep_job(args) -> dict[str, Any]:
    cfg, point, seed = args
    r = run_synthetic(apply_grid_point(cfg, point), seed)
    return {**point, "seed": seed, "accuracy": r.test.accuracy, "f1_violent": r.test.f1_violent,
            "f1_nonviolent": r.test.f1_nonviolent, "macro_f1": r.test.macro_f1}


def ablation_sweep(cfg: ExperimentConfig, grid: Mapping[str, Sequence[Any]], seeds: Sequence[int],
                   workers: int = 1) -> list[dict[str, Any]]:
    """Train and test every (grid point, seed) pair on synthetic data.  Row order is fixed."""
    jobs = [(cfg, p, s) for p in grid_points(grid) for s in seeds]
    for _, p, _ in jobs:
        apply_grid_point(cfg, p)  # fail fast on bad keys
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_sweep_job, jobs))
    return [_sweep_job(j) for j in jobs]


def sweep_table(rows: list[dict[str, Any]]) -> str:
    """Aligned table of mean accuracy / F1 per grid point over seeds."""
    if not rows:
        return "(empty sweep)"
    keys = [k for k in SWEEP_KEYS if k in rows[0]]
    metrics = ("accuracy", "f1_violent", "f1_nonviolent", "macro_f1")
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    widths = [max(len(k), *(len(str(g[i])) for g in groups)) for i, k in enumerate(keys)]
    head = "  ".join(k.ljust(w) for k, w in zip(keys, widths)) + "".join(f"{m:>15}" for m in metrics) + "  seeds"
    lines = [head]
    for g, rs in groups.items():
        vals = "".join(f"{100 * np.mean([r[m] for r in rs]):>14.2f}%" for m in metrics)
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(g, widths)) + vals + f"  {len(rs)}")
    lines.append("Synthetic planted-cue data only; benchmark accuracies are not reproducible here "
                 "(checkpoints and curated datasets unavailable).")
    return "\n".join(lines)
