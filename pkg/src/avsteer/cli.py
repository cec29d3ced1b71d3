"""Command-line entry point.

Verbs ``train``, ``eval``, ``flip``, ``mcnemar``, ``cost`` and ``sweep`` all
accept ``--config FILE --seed N --out DIR``.  Each writes ``report.txt`` and
``report.json`` into ``--out`` and prints the text report.  ``curate`` and
``synth`` handle data preparation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, to_dict


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=None, help="TOML config (defaults when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    return p


def _write_report(out: Path, name: str, text: str, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.txt").write_text(text + "\n")
    (out / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")
    print(text)


def _load_dataset(args, cfg: ExperimentConfig):
    if getattr(args, "data", None) is None:
        return None
    from .data.synth import load_dataset

    return load_dataset(args.data)


# ----------------------------------------------------------------- verbs


def cmd_train(args) -> int:
    from .plots import loss_curves
    from .train import run_synthetic

    cfg = load_config(args.config)
    res = run_synthetic(cfg, args.seed, out_dir=args.out, dataset=_load_dataset(args, cfg))
    loss_curves(res.history, args.out / "loss_curves.svg")
    np.savez(args.out / "test_predictions.npz", logits=res.test_logits, labels=res.test_labels,
             templates=res.test_templates)
    text = (f"best epoch {res.best_epoch}  val accuracy {res.val_accuracy * 100:.2f}%\n"
            f"test metrics:\n{res.test.text()}\ncheckpoint {res.checkpoint}")
    _write_report(args.out, "report", text, {"best_epoch": res.best_epoch, "val_accuracy": res.val_accuracy,
                                             "test": res.test.to_dict(), "checkpoint": str(res.checkpoint)})
    return 0


def cmd_eval(args) -> int:
    from dataclasses import replace

    from .checkpoint import load_model
    from .train import evaluate, predict_logits, synth_splits

    cfg = load_config(args.config)
    model, meta = load_model(args.checkpoint)
    cfg = replace(cfg, model=model.cfg)
    _, sp = synth_splits(cfg, args.seed, _load_dataset(args, cfg))
    data = getattr(sp, args.split)
    rep = evaluate(model, data)
    np.savez(_mk(args.out) / "predictions.npz", logits=predict_logits(model, data), labels=data.labels)
    _write_report(args.out, "report", f"{args.split} split, n={len(data)}\n{rep.text()}",
                  {"split": args.split, **rep.to_dict()})
    return 0


def _mk(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_vector(path: Path, key: str | None = None) -> np.ndarray:
    if path.suffix == ".npz":
        with np.load(path) as z:
            if "logits" in z and key in (None, "preds"):
                return (z["logits"] > 0).astype(np.int64)
            return z[key or "labels"]
    if path.suffix == ".npy":
        return np.load(path)
    return np.asarray(json.loads(path.read_text()))


def cmd_flip(args) -> int:
    from .analysis import FlipTable, flip_analysis, mcnemar
    from .plots import flip_bars

    if args.cells:
        table = FlipTable.from_cells(*args.cells)
    else:
        if not (args.video and args.av):
            raise SystemExit("flip: give --cells H U C W, or --video and --av prediction files")
        labels = _read_vector(args.labels, "labels") if args.labels else _read_vector(args.video, "labels")
        table = flip_analysis(_read_vector(args.video, "preds"), _read_vector(args.av, "preds"), labels)
    mc = mcnemar(table.helps, table.hurts)
    _mk(args.out)
    flip_bars(table, args.out / "flip_bars.svg")
    _write_report(args.out, "report", table.text() + "\n" + mc.text(),
                  {"flip": table.to_dict(), "mcnemar": mc.to_dict()})
    return 0


def cmd_mcnemar(args) -> int:
    from .analysis import mcnemar

    res = mcnemar(args.helps, args.hurts)
    _write_report(args.out, "report", res.text(), res.to_dict())
    return 0


def cmd_cost(args) -> int:
    from .cost import cost_report

    cfg = load_config(args.config)
    rep = cost_report(cfg.model)
    _write_report(args.out, "report", rep.text(), rep.to_dict())
    return 0


def cmd_sweep(args) -> int:
    from .train import ablation_sweep, sweep_table

    cfg = load_config(args.config)
    grid = json.loads(args.grid)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    rows = ablation_sweep(cfg, grid, seeds, workers=args.workers)
    _write_report(args.out, "report", sweep_table(rows), {"grid": grid, "seeds": seeds, "rows": rows})
    return 0


def cmd_curate(args) -> int:
    from .data.annotations import load_annotations, segment_runs
    from .data.manifest import read_manifest, write_manifest
    from .data.media import apply_exclusions, filter_records, read_exclusions
    from .data.splits import make_splits

    if args.stage == "segment":
        records = [r for ann in load_annotations(args.annotations) for r in segment_runs(ann, args.min_clip)]
        if args.media:
            records = filter_records(records, args.media, args.threshold)
        note = f"{len(records)} clips from {len({r.video_id for r in records})} videos"
    elif args.stage == "filter":
        records = read_manifest(args.manifest)
        if args.media:
            records = filter_records(records, args.media, args.threshold)
        if args.exclusions:
            records = apply_exclusions(records, read_exclusions(args.exclusions))
        counts: dict[str, int] = {}
        for r in records:
            counts[str(r.audio_status)] = counts.get(str(r.audio_status), 0) + 1
        note = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    else:
        records = [r for r in read_manifest(args.manifest) if args.keep_all or r.audio_status == "ok"]
        names = args.names.split(",")
        parts = make_splits(records, [float(x) for x in args.ratios.split(",")], seed=args.seed, names=names)
        records = [r for n in names for r in parts[n]]
        note = " ".join(f"{n}={len(parts[n])}" for n in names)
    write_manifest(args.out, records)
    print(f"{note} -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    from .data.synth import save_dataset, synth_generate
    from .train import synth_config_for

    cfg = load_config(args.config)
    sc = synth_config_for(cfg, args.seed)
    ds = synth_generate(sc)
    save_dataset(ds, sc, args.out)
    print(f"{len(ds)} clips ({int(ds.labels.sum())} violent) -> {args.out}")
    return 0


def cmd_config(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps(to_dict(cfg), indent=2))
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsteer", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    common = _common()

    p = sub.add_parser("train", parents=[common], help="train on synthetic planted-cue data")
    p.add_argument("--data", type=Path, help="saved synthetic dataset directory (else generated)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flip", parents=[common], help="prediction-flip table and McNemar test")
    p.add_argument("--cells", type=int, nargs=4, metavar=("HELPS", "HURTS", "BOTH_OK", "BOTH_BAD"))
    p.add_argument("--video", type=Path, help="video-only predictions (.npz from eval, .npy or JSON list)")
    p.add_argument("--av", type=Path, help="audio-visual predictions")
    p.add_argument("--labels", type=Path)
    p.set_defaults(func=cmd_flip)

    p = sub.add_parser("mcnemar", parents=[common], help="continuity-corrected McNemar test")
    p.add_argument("--helps", type=int, required=True)
    p.add_argument("--hurts", type=int, required=True)
    p.set_defaults(func=cmd_mcnemar)

    p = sub.add_parser("cost", parents=[common], help="parameter and MAC accounting")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sweep", parents=[common], help="ablation grid on synthetic data")
    p.add_argument("--grid", required=True,
                   help='JSON object, e.g. \'{"gate": [true, false], "direction": ["video_to_audio"]}\'')
    p.add_argument("--seeds", help="comma-separated seed list (default: --seed)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("curate", help="clip curation pipeline")
    csub = p.add_subparsers(dest="stage", required=True)
    c = csub.add_parser("segment", help="annotations -> clip manifest (plus audio verdicts with --media)")
    c.add_argument("--annotations", type=Path, required=True)
    c.add_argument("--media", type=Path, help="directory of <video_id>.wav source tracks")
    c.add_argument("--min-clip", type=float, default=1.0)
    c.add_argument("--threshold", type=float, default=-80.0)
    c.add_argument("--out", type=Path, required=True, help="manifest to write")
    c = csub.add_parser("filter", help="audio verdicts and manual exclusions")
    c.add_argument("--manifest", type=Path, required=True)
    c.add_argument("--media", type=Path)
    c.add_argument("--threshold", type=float, default=-80.0)
    c.add_argument("--exclusions", type=Path, help="clip ids rejected on manual review, one per line")
    c.add_argument("--out", type=Path, required=True)
    c = csub.add_parser("split", help="grouped, stratified splits of usable clips")
    c.add_argument("--manifest", type=Path, required=True)
    c.add_argument("--ratios", default="0.75,0.25")
    c.add_argument("--names", default="train,test")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--keep-all", action="store_true", help="also split clips without usable audio")
    c.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("synth", help="synthetic planted-cue data")
    ssub = p.add_subparsers(dest="action", required=True)
    s = ssub.add_parser("gen", parents=[common], help="generate and save a dataset")
    s.set_defaults(func=cmd_synth)

    p = sub.add_parser("config", help="print the resolved config as JSON")
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
