# emotion_ensemble/cli.py
from __future__ import annotations

import argparse
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config_loader import dump_default_config, load_app_config, load_run_config
from .errors import ConfigError, catch_all
from .fusion import DEFAULT_WEIGHTS, SCHEMES, FusionSpec, fuse, parse_weights
from .generators import generate_report_workbook
from .gradchecks import run_gradcheck_suite
from .metrics import evaluate
from .records import PredictionSet
from .storage import (
    _atomic_write_text,
    get_runs_dir,
    load_annotations,
    load_predictions,
    save_predictions,
    save_report,
)
from .synthetic import make_synthetic_dataset
from .training import predict, train
from .ui import banner, note, panel, print_json, results_table, setup_logging

log = logging.getLogger(__name__)


# ---------- helpers ----------

def _categories_for(preds: PredictionSet) -> Optional[tuple[str, ...]]:
    """Category names for report tables: the file's own list, else the packaged vocabulary."""
    width = len(next(iter(preds.predictions.values())).categorical) if len(preds) else 0
    names = preds.meta.get("categories")
    if names and len(names) == width:
        return tuple(names)
    vocab = load_app_config().categories
    return vocab if len(vocab) == width else None


def _default_run_dir(seed: int) -> Path:
    return get_runs_dir() / f"run-seed{seed}"


# ---------- commands ----------

@catch_all(flow="train")
def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    manifest = args.manifest or cfg.data.manifest
    if not manifest:
        raise ConfigError("no dataset manifest: pass --manifest or set data.manifest in the run config")
    out_dir = Path(args.out) if args.out else _default_run_dir(cfg.seed)
    if not args.json:
        banner(f"train · {cfg.model.kind} · seed {cfg.seed}")

    result = train(cfg, manifest, out_dir, epochs=args.epochs)

    if args.json:
        print_json({
            "checkpoint": str(result.checkpoint),
            "log": str(result.log_path),
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "history": [asdict(r) for r in result.history],
        })
        return 0
    results_table(
        "Epochs",
        ["epoch", "train loss", "val loss", "lr", "best"],
        [(r.epoch, r.train_loss, r.val_loss, r.lr, "*" if r.improved else "") for r in result.history],
    )
    panel(f"✅ Best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f})\n"
          f"💾 Saved -> {result.checkpoint}")
    return 0


@catch_all(flow="eval")
def cmd_eval(args: argparse.Namespace) -> int:
    preds = predict(args.checkpoint, args.manifest, split=args.split)
    out = Path(args.out)
    categories = preds.meta.get("categories")
    save_predictions(out, preds, categories)
    if args.json:
        print_json({"predictions": str(out), "clips": len(preds), "model": preds.model, "split": args.split})
    else:
        panel(f"✅ {len(preds)} clip(s) of split '{args.split}' predicted with {preds.model}\n💾 Saved -> {out}")
    return 0


@catch_all(flow="metrics")
def cmd_metrics(args: argparse.Namespace) -> int:
    preds = load_predictions(Path(args.predictions))
    annotations = load_annotations(Path(args.annotations))
    report = evaluate(preds, annotations, _categories_for(preds))
    report.meta = {"predictions": str(args.predictions), "model": preds.model}
    payload = report.to_dict()

    if args.out:
        save_report(Path(args.out), payload)
    if args.xlsx:
        xlsx = generate_report_workbook(report, args.xlsx, title=f"Evaluation · {preds.model or 'predictions'}")
        log.info("report workbook -> %s", xlsx)

    if args.json:
        print_json(payload)
        return 0
    results_table("Categories", ["category", "AP", "ROC-AUC"], report.per_class_rows())
    results_table("Dimensions", ["dimension", "R2"], report.per_dimension_rows())
    results_table(
        f"Summary ({report.num_clips} clips)",
        ["metric", "value"],
        [("mAP", report.mAP), ("mRA", report.mRA), ("mR2", report.mR2), ("ERS", report.ers)],
    )
    if report.skipped_ap or report.skipped_roc_auc or report.skipped_r2:
        panel(f"⚠️ Undefined and skipped: AP {report.skipped_ap} class(es), "
              f"ROC-AUC {report.skipped_roc_auc} class(es), R2 {report.skipped_r2} dimension(s)")
    if args.out:
        panel(f"💾 Saved -> {args.out}")
    return 0


@catch_all(flow="fuse")
def cmd_fuse(args: argparse.Namespace) -> int:
    sets = [load_predictions(Path(p)) for p in args.predictions]
    weights = parse_weights(args.weights) if args.weights else None
    spec = FusionSpec(scheme=args.scheme, weights=weights)
    fused = fuse(sets, spec)
    fused.meta["files"] = [str(p) for p in args.predictions]
    out = Path(args.out)
    save_predictions(out, fused, _categories_for(fused))
    if args.json:
        print_json({"predictions": str(out), "clips": len(fused), "scheme": spec.scheme,
                    "weights": fused.meta.get("weights")})
    else:
        panel(f"✅ Fused {len(sets)} prediction file(s) over {len(fused)} clip(s) ({spec.scheme})\n"
              f"💾 Saved -> {out}")
    return 0


@catch_all(flow="gradcheck")
def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradcheck_suite(seeds=args.seeds, tolerance=args.tolerance)
    ok = all(r.passed for r in results)
    if args.json:
        print_json({
            "passed": ok,
            "tolerance": args.tolerance,
            "checks": [{"name": r.name, "max_rel_error": r.max_rel_error, "passed": r.passed} for r in results],
        })
    else:
        results_table("Gradient checks (float64)", ["check", "max rel. error", "status"],
                      [(r.name, r.max_rel_error, r.passed) for r in results])
        failed = [r.name for r in results if not r.passed]
        panel("✅ All gradient checks passed." if ok else "❌ Failed: " + ", ".join(failed))
    return 0 if ok else 2


@catch_all(flow="synth")
def cmd_synth(args: argparse.Namespace) -> int:
    manifest = make_synthetic_dataset(Path(args.out), num_clips=args.clips, num_frames=args.frames,
                                      seed=args.seed)
    if args.json:
        print_json({"manifest": str(manifest)})
    else:
        panel(f"✅ Synthetic dataset with {args.clips} clip(s)\n📁 Manifest -> {manifest}")
    return 0


@catch_all(flow="config")
def cmd_config(args: argparse.Namespace) -> int:
    text = dump_default_config()
    if args.out:
        _atomic_write_text(Path(args.out), text)
        panel(f"💾 Saved -> {args.out}")
    else:
        print(text, end="")
    return 0


# ---------- parser ----------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emoens", description="Video emotion recognition engine.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def _json(p):
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", help="run config YAML (merged over the defaults)")
    p.add_argument("--manifest", help="dataset manifest (overrides data.manifest)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="run directory (default ~/.emoens/runs/run-seed<N>)")
    _json(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="write predictions of a checkpoint for one split")
    p.add_argument("checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True, help="prediction file (JSON)")
    _json(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="score predictions against annotations")
    p.add_argument("predictions")
    p.add_argument("annotations", help="annotation file or skeleton dataset")
    p.add_argument("--out", help="report file (JSON)")
    p.add_argument("--xlsx", help="also export the report as a workbook")
    _json(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("fuse", help="fuse aligned prediction files")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--scheme", choices=SCHEMES, default="weighted_average")
    p.add_argument("--weights", help="comma separated, e.g. " + ",".join(f"{w:g}" for w in DEFAULT_WEIGHTS))
    p.add_argument("--out", required=True)
    _json(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=50, help="random draws per check")
    p.add_argument("--tolerance", type=float, default=1e-4)
    _json(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a small synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=20)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    _json(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("config", help="print the default run config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)
    return parser


@catch_all(flow="CLI")
def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = "DEBUG" if args.verbose else load_app_config().log_level
    setup_logging(level)
    log.debug("emoens %s: %s", __version__, args.command)
    code = args.func(args)
    if code and not getattr(args, "json", False):
        note(f"exit code {code}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
