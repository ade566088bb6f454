"""Command-line entry point: generate, caption, train, evaluate, ablate, zero-shot, export-alignment, validate-data.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__

logger = logging.getLogger("dualcast")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    # Only show defaults that are informative and not already spelled out.
    def _get_help_string(self, action):
        if action.default is None or action.default is False or "(default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


# -- shared helpers -----------------------------------------------------------


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _make_run_dir(args, snapshot: dict) -> Path:
    from .config import config_hash

    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path(args.runs_root) / f"{stamp}_{config_hash(snapshot)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", snapshot)
    return run_dir


def _load(path: str, holdout_fraction: float | None = None):
    from .data import DatasetError, load_dataset, split_windows

    windows, manifest = load_dataset(_require_file(path, "dataset"))
    if not windows:
        raise DatasetError(f"{path}: dataset is empty")
    frac = holdout_fraction
    if frac is None:
        frac = manifest.holdout_fraction if manifest is not None else 0.2
    train, test = split_windows(windows, frac)
    name = manifest.dataset_name if manifest is not None else Path(path).stem
    return windows, train, test, name


def _pick_split(split: str, windows, train, test):
    return {"all": windows, "train": train, "test": test}[split]


def _model_and_train_config(args):
    from .config import load_config_file, load_preset

    model_cfg, train_cfg = load_preset(args.preset)
    if args.config:
        model_cfg, train_cfg = load_config_file(_require_file(args.config, "config file"), (model_cfg, train_cfg))
    updates = {
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "max_epochs": args.epochs,
        "patience": args.patience,
        "seeds": args.seeds,
        "val_fraction": args.val_fraction,
        "max_steps": args.max_steps,
    }
    train_cfg = replace(train_cfg, **{k: v for k, v in updates.items() if v is not None})
    if getattr(args, "ablation", None):
        train_cfg = replace(train_cfg, ablation=args.ablation)
    from .training import deterministic_requested

    if args.deterministic or deterministic_requested():
        train_cfg = replace(train_cfg, deterministic=True)
    return model_cfg, train_cfg.validate()


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", default=None, help="explicit output directory (default: <runs-root>/<timestamp>_<hash>)")
    p.add_argument("--runs-root", default="runs", help="parent of auto-named run directories")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    from .config import preset_names

    p.add_argument("--dataset", required=True, help="JSONL dataset (manifest sidecar honoured)")
    p.add_argument("--preset", default="desk", choices=preset_names(), metavar="NAME",
                   help="hyperparameter preset: " + ", ".join(preset_names()))
    p.add_argument("--config", default=None, help="JSON/TOML file with preset-column or field overrides")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: preset)")
    p.add_argument("--batch-size", type=_positive_int, default=None, help="batch size (default: preset)")
    p.add_argument("--epochs", type=_positive_int, default=None, help="maximum epochs (default: preset)")
    p.add_argument("--patience", type=_positive_int, default=None, help="early-stopping patience (default: preset)")
    p.add_argument("--seeds", type=_parse_seeds, default=None, help="comma-separated seeds (default: 0,1,2)")
    p.add_argument("--val-fraction", type=_fraction, default=None, help="validation share of training windows (default: preset)")
    p.add_argument("--max-steps", type=_positive_int, default=None, help="optimizer step cap per seed")
    p.add_argument("--holdout-fraction", type=_fraction, default=None, help="test share (default: manifest or 0.2)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded deterministic kernels")
    _add_run_args(p)


def _snapshot(args, **extra) -> dict:
    skip = {"func", "run_dir", "runs_root"}
    out = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in skip}
    out.update(extra)
    return out


def _print_outputs(paths: Sequence[Path | str]) -> None:
    for p in paths:
        print(p)


def _result_rows(tag: str, flags: str, result) -> list:
    per = ";".join(f"{r['seed']}:{r['mse']:.6g}/{r['mae']:.6g}" for r in result.per_seed)
    return [tag, flags, repr(result.mean_mse), repr(result.std_mse), repr(result.mean_mae), repr(result.std_mae), per]


RESULT_HEADER = ["row", "flags", "mean_mse", "std_mse", "mean_mae", "std_mae", "per_seed(mse/mae)"]


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> list[Path]:
    from .synth import family_distribution, write_dataset

    overrides = {}
    if args.config:
        overrides = json.loads(_require_file(args.config, "distribution config").read_text(encoding="utf-8"))
    overrides = {k: v for k, v in overrides.items() if k not in ("lookback", "horizon")}
    dist = family_distribution(args.family, args.lookback, args.horizon, **overrides)
    out, manifest = write_dataset(
        args.out, args.n, dist, seed=args.seed, holdout_fraction=args.holdout_fraction,
        dataset_name=args.name or Path(args.out).stem,
    )
    return [out, manifest]


def cmd_caption(args) -> list[Path]:
    from .captioner import IepfParams, caption_dataset
    from .data import WindowingSpec

    raw = _require_file(args.input, "input CSV")
    spec = WindowingSpec(args.lookback, args.horizon, args.stride)
    _, report = caption_dataset(raw, spec, IepfParams(args.epsilon), args.out, args.holdout_fraction)
    out = Path(args.out)
    report_path = _write_json(out.with_name(out.stem + ".caption_report.json"), report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    if report.n_windows == 0:
        raise RuntimeError(f"no windows captioned; see {report_path}")
    from .data import manifest_path

    return [out, manifest_path(out), report_path]


def cmd_train(args) -> list[Path]:
    from . import plotting
    from .training import run_seeds

    model_cfg, train_cfg = _model_and_train_config(args)
    _, train, test, name = _load(args.dataset, args.holdout_fraction)
    if not test:
        test = train
    run_dir = _make_run_dir(args, _snapshot(args, model=model_cfg.to_dict(), train=train_cfg.to_dict()))
    result, _ = run_seeds(train, test, model_cfg, train_cfg, run_dir, extra={"dataset_name": name})
    result.tag = name
    outputs = [run_dir / "config.json", _write_json(run_dir / "results.json", result.to_dict())]
    outputs += sorted(run_dir.glob("seed*/checkpoint")) + sorted(run_dir.glob("seed*/train_log.jsonl"))
    if not args.no_plots:
        outputs.append(plotting.plot_loss_trace(result.loss_trace, run_dir / "loss_trace.png",
                                                [f"seed {s}" for s in train_cfg.seeds]))
    return outputs


def _evaluate_files(model, windows, run_dir: Path, per_window: bool, plots: bool) -> list[Path]:
    import numpy as np

    from . import plotting
    from .training import predict

    outputs = []
    if per_window or plots:
        pred, _ = predict(model, windows)
    if per_window:
        path = run_dir / "per_window.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["series_id", "mse", "mae"])
            for w, p in zip(windows, pred):
                err = p - np.asarray(w.future)
                wr.writerow([w.series_id, repr(float(np.mean(err**2))), repr(float(np.mean(np.abs(err))))])
        outputs.append(path)
    if plots:
        k = min(6, len(windows))
        outputs.append(
            plotting.plot_forecasts(
                [np.asarray(w.history) for w in windows[:k]],
                [np.asarray(w.future) for w in windows[:k]],
                list(pred[:k]), None, run_dir / "forecasts.png", [w.series_id for w in windows[:k]],
            )
        )
    return outputs


def _load_checkpoint_for_eval(path: str, ablation: str | None):
    from .checkpoint import load_checkpoint, read_checkpoint_config
    from .config import Ablation

    ckpt = _require_file(path, "checkpoint directory")
    model = load_checkpoint(ckpt)
    if ablation:
        extra = Ablation.parse(ablation)
        allowed = {"no_history_text", "no_future_text"}
        bad = set(extra.flags) - allowed
        if bad:
            raise UsageError(
                f"evaluation can only blank inputs ({sorted(allowed)}); {sorted(bad)} change the architecture "
                "and need a model trained with them"
            )
        model.ablation = Ablation(model.ablation.flags | extra.flags)
    return model, read_checkpoint_config(ckpt)


def cmd_evaluate(args) -> list[Path]:
    from .training import RunResult, evaluate_windows

    model, snap = _load_checkpoint_for_eval(args.checkpoint, args.ablation)
    windows, train, test, name = _load(args.dataset, args.holdout_fraction)
    subset = _pick_split(args.split, windows, train, test)
    run_dir = _make_run_dir(args, _snapshot(args, checkpoint_config=snap))
    metrics = evaluate_windows(model, subset)
    result = RunResult.aggregate([{"seed": None, **metrics}], ablation=str(model.ablation), tag=name)
    outputs = [run_dir / "config.json", _write_json(run_dir / "results.json", result.to_dict())]
    outputs += _evaluate_files(model, subset, run_dir, args.per_window, not args.no_plots)
    return outputs


def cmd_ablate(args) -> list[Path]:
    from . import plotting
    from .config import Ablation
    from .training import ABLATION_ROWS, run_ablation_matrix

    rows = "all" if args.rows == "all" else [r.strip() for r in args.rows.split(",") if r.strip()]
    if rows != "all":
        unknown = [r for r in rows if r not in ABLATION_ROWS]
        if unknown:
            raise UsageError(f"unknown ablation row(s) {unknown}; choose from {list(ABLATION_ROWS)}")
    model_cfg, train_cfg = _model_and_train_config(args)
    _, train, test, name = _load(args.dataset, args.holdout_fraction)
    run_dir = _make_run_dir(args, _snapshot(args, model=model_cfg.to_dict(), train=train_cfg.to_dict()))
    results = run_ablation_matrix(train, test, model_cfg, train_cfg, rows, run_dir)
    table = run_dir / "ablation.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RESULT_HEADER)
        for key, res in results.items():
            wr.writerow(_result_rows(res.tag, str(Ablation.parse(ABLATION_ROWS[key][1])), res))
    outputs = [run_dir / "config.json", table,
               _write_json(run_dir / "results.json", {k: r.to_dict() for k, r in results.items()})]
    if not args.no_plots:
        bars = {r.tag: (r.mean_mse, r.std_mse) for r in results.values()}
        outputs.append(plotting.plot_ablation(bars, run_dir / "ablation.png"))
    return outputs


def cmd_zero_shot(args) -> list[Path]:
    from .training import zero_shot

    model, snap = _load_checkpoint_for_eval(args.checkpoint, None)
    source = args.source_name or snap.get("extra", {}).get("dataset_name", "source")
    windows, train, test, name = _load(args.target, args.holdout_fraction)
    subset = _pick_split(args.split, windows, train, test)
    run_dir = _make_run_dir(args, _snapshot(args, checkpoint_config=snap))
    result = zero_shot(model, subset, source, name)
    outputs = [run_dir / "config.json", _write_json(run_dir / "results.json", result.to_dict())]
    table = run_dir / "zero_shot.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RESULT_HEADER)
        wr.writerow(_result_rows(result.tag, result.ablation, result))
    outputs.append(table)
    outputs += _evaluate_files(model, subset, run_dir, False, not args.no_plots)
    return outputs


def cmd_export_alignment(args) -> list[Path]:
    from .training import export_alignment

    model, snap = _load_checkpoint_for_eval(args.checkpoint, None)
    windows, train, test, _ = _load(args.dataset, args.holdout_fraction)
    subset = _pick_split(args.split, windows, train, test)[: args.n]
    run_dir = _make_run_dir(args, _snapshot(args, checkpoint_config=snap))
    files = export_alignment(model, subset, run_dir, plots=not args.no_plots)
    return [run_dir / "config.json"] + [Path(p) for p in files.values()]


def cmd_validate_data(args) -> list[Path]:
    from .data import WindowingSpec, read_jsonl, read_manifest

    path = _require_file(args.path, "dataset")
    manifest = read_manifest(path)
    spec = None
    captioned = args.captioned
    if args.lookback is not None or args.horizon is not None:
        if args.lookback is None or args.horizon is None:
            raise UsageError("--lookback and --horizon go together")
        spec = WindowingSpec(args.lookback, args.horizon)
    elif manifest is not None:
        spec = manifest.spec
        captioned = captioned or manifest.captioned
    windows = read_jsonl(path, spec, captioned)
    summary = {"path": str(path), "records": len(windows), "manifest": manifest is not None}
    if windows:
        summary["lookback"] = windows[0].lookback
        summary["horizon"] = windows[0].horizon
    print(json.dumps(summary, sort_keys=True))
    return []


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .synth import FAMILIES

    parser = argparse.ArgumentParser(
        prog="dualcast",
        description="Text-conditioned probabilistic forecasting: data, training and diagnostics.",
        formatter_class=_Formatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic captioned dataset", formatter_class=_Formatter)
    p.add_argument("--n", type=_positive_int, default=3040, help="number of windows")
    p.add_argument("--lookback", type=_positive_int, default=200, help="history length L")
    p.add_argument("--horizon", type=_positive_int, default=30, help="forecast length h")
    p.add_argument("--seed", type=int, default=7, help="master seed")
    p.add_argument("--family", default="default", choices=sorted(FAMILIES), help="named distribution")
    p.add_argument("--config", default=None, help="JSON overrides of the sampling distribution")
    p.add_argument("--holdout-fraction", type=_fraction, default=0.2, help="test share recorded in the manifest")
    p.add_argument("--name", default=None, help="dataset name (default: output file stem)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("caption", help="caption sliding windows of a raw CSV", formatter_class=_Formatter)
    p.add_argument("--input", required=True, help="numeric CSV, one channel per column")
    p.add_argument("--lookback", type=_positive_int, default=336, help="history length L")
    p.add_argument("--horizon", type=_positive_int, default=96, help="forecast length h")
    p.add_argument("--stride", type=_positive_int, default=4, help="window stride")
    p.add_argument("--epsilon", type=float, default=0.08, help="segmentation distance threshold")
    p.add_argument("--holdout-fraction", type=_fraction, default=0.2, help="test share recorded in the manifest")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("train", help="train one model per seed and score the holdout", formatter_class=_Formatter)
    _add_train_args(p)
    p.add_argument("--ablation", default="full", help="ablation flags joined by '+'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset", formatter_class=_Formatter)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--dataset", required=True, help="JSONL dataset")
    p.add_argument("--split", default="test", choices=("test", "train", "all"), help="which part to score")
    p.add_argument("--holdout-fraction", type=_fraction, default=None, help="test share (default: manifest or 0.2)")
    p.add_argument("--ablation", default=None, help="extra input blanking: no_history_text and/or no_future_text")
    p.add_argument("--per-window", action="store_true", help="also write per-window metrics")
    _add_run_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation matrix", formatter_class=_Formatter)
    _add_train_args(p)
    p.add_argument("--rows", default="all", help="'all' or comma-separated row keys")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("zero-shot", help="evaluate a checkpoint on an unseen dataset", formatter_class=_Formatter)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory trained on the source dataset")
    p.add_argument("--target", required=True, help="JSONL dataset never seen in training")
    p.add_argument("--source-name", default=None, help="source label (default: from the checkpoint)")
    p.add_argument("--split", default="test", choices=("test", "train", "all"), help="which part to score")
    p.add_argument("--holdout-fraction", type=_fraction, default=None, help="test share (default: manifest or 0.2)")
    _add_run_args(p)
    p.set_defaults(func=cmd_zero_shot)

    p = sub.add_parser("export-alignment", help="write similarity and attention diagnostics", formatter_class=_Formatter)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--dataset", required=True, help="JSONL dataset")
    p.add_argument("--n", type=_positive_int, default=64, help="number of windows (first n of the split)")
    p.add_argument("--split", default="test", choices=("test", "train", "all"), help="which part to use")
    p.add_argument("--holdout-fraction", type=_fraction, default=None, help="test share (default: manifest or 0.2)")
    _add_run_args(p)
    p.set_defaults(func=cmd_export_alignment)

    p = sub.add_parser("validate-data", help="check a dataset file record by record", formatter_class=_Formatter)
    p.add_argument("path", help="JSONL dataset")
    p.add_argument("--lookback", type=_positive_int, default=None, help="required history length")
    p.add_argument("--horizon", type=_positive_int, default=None, help="required forecast length")
    p.add_argument("--captioned", action="store_true", help="require both text fields")
    p.set_defaults(func=cmd_validate_data)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        outputs = args.func(args)
    except UsageError as exc:
        print(f"dualcast {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dualcast {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_outputs(outputs)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
