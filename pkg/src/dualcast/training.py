"""Training with early stopping, multi-seed runs, ablation matrix, zero-shot and alignment export."""

from __future__ import annotations

import contextlib
import copy
import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import Ablation, ModelConfig, TrainConfig, config_hash
from .data import MultimodalWindow
from .model import DualForecaster, ForwardOutput
from .objectives import ContrastiveConfig, contrastive_loss, mse_mae, similarity_logits, studentt_nll
from .text import build_vocab

logger = logging.getLogger(__name__)

DETERMINISTIC_ENV = "DUALCAST_DETERMINISTIC"

# Ablation matrix rows: key -> (display label, ablation flags)
ABLATION_ROWS: dict[str, tuple[str, str]] = {
    "full": ("history + future text", "full"),
    "no_any_text": ("series only", "no_any_text"),
    "history_only": ("history text only", "no_future_interact"),
    "history_only_no_contrastive": ("history text only, no contrastive loss", "no_future_interact+no_contrastive"),
    "history_only_no_history_interact": (
        "history text only, no history cross-attention",
        "no_future_interact+no_history_interact",
    ),
    "future_no_history_text": ("future text only", "no_history_text"),
}


class TrainingDiverged(RuntimeError):
    pass


def deterministic_requested() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") not in ("", "0")


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    """Single-threaded, deterministic-kernel execution for bitwise reproducibility."""
    if not enabled:
        yield
        return
    threads = torch.get_num_threads()
    was = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(was)
        torch.set_num_threads(threads)


def _seed_stream(seed: int, stream: str) -> int:
    # Named substreams of one master seed.
    names = {"init": 1, "order": 2, "split": 3}
    return int(np.random.SeedSequence([seed, names[stream]]).generate_state(1)[0])


def prepare_model_config(config: ModelConfig, windows: Sequence[MultimodalWindow]) -> ModelConfig:
    """Fill the text vocabulary from the training texts when it is empty."""
    if config.text.kind == "trainable_small" and not config.text.vocab:
        vocab = build_vocab([t for w in windows for t in (w.history_text, w.future_text)])
        config = replace(config, text=replace(config.text, vocab=vocab))
    return config.validate()


def _tensor(windows: Sequence[MultimodalWindow], attr: str, dtype) -> torch.Tensor:
    return torch.tensor(np.array([getattr(w, attr) for w in windows]), dtype=dtype)


def batch_losses(model: DualForecaster, windows: Sequence[MultimodalWindow]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, ForwardOutput]:
    """(total, forecast NLL, contrastive, forward output) on one batch, NLL in normalized space."""
    out = model.forward_windows(windows)
    future = _tensor(windows, "future", model.dtype)
    future_norm = (future - out.mean) / out.std
    nll = studentt_nll(out.params_norm, future_norm)
    if model.ablation.uses_contrastive:
        ccfg = ContrastiveConfig(model.config.temperature, model.config.normalize_cls)
        con = contrastive_loss(out.ts_cls, out.text_cls, ccfg)
        total = nll + con
    else:
        con = torch.zeros((), dtype=nll.dtype)
        total = nll
    return total, nll, con, out


@torch.no_grad()
def predict(model: DualForecaster, windows: Sequence[MultimodalWindow], batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Denormalized and normalized location forecasts, each (N, h)."""
    was = model.training
    model.eval()
    raw, norm = [], []
    for i in range(0, len(windows), batch_size):
        out = model.forward_windows(windows[i : i + batch_size])
        raw.append(out.params.location.double().numpy())
        norm.append(out.params_norm.location.double().numpy())
    model.train(was)
    return np.concatenate(raw), np.concatenate(norm)


def evaluate_windows(model: DualForecaster, windows: Sequence[MultimodalWindow]) -> dict[str, float]:
    if not windows:
        raise ValueError("cannot evaluate on an empty dataset")
    cfg = model.config
    bad = [w.series_id for w in windows if w.lookback != cfg.lookback or w.horizon != cfg.horizon]
    if bad:
        raise ValueError(
            f"window lengths (history/future) must be {cfg.lookback}/{cfg.horizon}; "
            f"mismatched records: {bad[:5]}"
        )
    pred, pred_norm = predict(model, windows)
    truth = np.array([w.future for w in windows])
    hist = np.array([w.history for w in windows])
    mean = hist.mean(axis=1, keepdims=True)
    std = np.maximum(hist.std(axis=1, keepdims=True), 1e-5)
    mse, mae = mse_mae(pred, truth)
    mse_n, mae_n = mse_mae(pred_norm, (truth - mean) / std)
    return {"mse": mse, "mae": mae, "mse_norm": mse_n, "mae_norm": mae_n}


@dataclass
class TrainOutcome:
    model: DualForecaster
    best_epoch: int
    epochs_run: int
    steps: int
    best_monitor: float
    monitor_history: list[float]
    epoch_losses: list[float]


def _log_line(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def train_model(
    windows: Sequence[MultimodalWindow],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int = 0,
    val_windows: Sequence[MultimodalWindow] | None = None,
    log_path: str | Path | None = None,
) -> TrainOutcome:
    """Fit one model; early-stop on validation MSE and return the best-epoch weights.

    Without an explicit validation set, ``val_fraction`` of ``windows`` is
    held out; when that leaves nothing (tiny datasets or fraction 0), the
    training-set MSE is monitored instead.
    """
    tc = train_config.validate()
    windows = list(windows)
    if not windows:
        raise ValueError("training set is empty")
    if val_windows is None:
        n_val = int(round(len(windows) * tc.val_fraction))
        if n_val >= 1 and len(windows) - n_val >= 1:
            perm = np.random.default_rng(_seed_stream(seed, "split")).permutation(len(windows))
            val_windows = [windows[i] for i in sorted(perm[:n_val])]
            windows = [windows[i] for i in sorted(perm[n_val:])]
        else:
            val_windows = []
    monitor_set = list(val_windows) or windows

    with deterministic_mode(tc.deterministic or deterministic_requested()):
        mc = prepare_model_config(model_config, list(windows) + list(val_windows))
        torch.manual_seed(_seed_stream(seed, "init"))
        model = DualForecaster(mc, tc.ablation)
        params = [p for p in model.parameters() if p.requires_grad]
        opt = torch.optim.AdamW(params, lr=tc.learning_rate, betas=tc.betas, weight_decay=tc.weight_decay)
        order_rng = np.random.default_rng(_seed_stream(seed, "order"))

        best = math.inf
        best_state = copy.deepcopy(model.state_dict())
        best_epoch = 0
        bad_epochs = 0
        history: list[float] = []
        epoch_losses: list[float] = []
        step = 0
        epoch = 0
        fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
        try:
            for epoch in range(1, tc.max_epochs + 1):
                model.train()
                order = order_rng.permutation(len(windows))
                totals = []
                for b in range(0, len(order), tc.batch_size):
                    batch = [windows[i] for i in order[b : b + tc.batch_size]]
                    total, nll, con, _ = batch_losses(model, batch)
                    if not torch.isfinite(total):
                        msg = f"non-finite loss at epoch {epoch} step {step} (batch starting {batch[0].series_id})"
                        logger.error(msg)
                        raise TrainingDiverged(msg)
                    opt.zero_grad(set_to_none=True)
                    total.backward()
                    if tc.grad_clip:
                        torch.nn.utils.clip_grad_norm_(params, tc.grad_clip)
                    opt.step()
                    step += 1
                    totals.append(total.item())
                    _log_line(
                        fh,
                        {
                            "epoch": epoch,
                            "step": step,
                            "forecast_nll": nll.item(),
                            "contrastive": con.item(),
                            "total": total.item(),
                            "lr": opt.param_groups[0]["lr"],
                        },
                    )
                    if tc.max_steps is not None and step >= tc.max_steps:
                        break
                epoch_losses.append(float(np.mean(totals)))
                monitor = evaluate_windows(model, monitor_set)["mse"]
                history.append(monitor)
                if monitor < best:
                    best, best_epoch, bad_epochs = monitor, epoch, 0
                    best_state = copy.deepcopy(model.state_dict())
                else:
                    bad_epochs += 1
                if bad_epochs >= tc.patience:
                    break
                if tc.max_steps is not None and step >= tc.max_steps:
                    break
        finally:
            if fh is not None:
                fh.close()
        model.load_state_dict(best_state)
        model.eval()
    return TrainOutcome(model, best_epoch, epoch, step, best, history, epoch_losses)


# -- multi-seed results -------------------------------------------------------


@dataclass
class RunResult:
    per_seed: list[dict] = field(default_factory=list)
    mean_mse: float = math.nan
    mean_mae: float = math.nan
    std_mse: float = 0.0
    std_mae: float = 0.0
    loss_trace: list[list[float]] = field(default_factory=list)
    wall_clock: float = 0.0
    config_hash: str = ""
    ablation: str = "full"
    tag: str = ""
    metric_scale: str = "raw (denormalized location)"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def aggregate(cls, per_seed: list[dict], **kw) -> "RunResult":
        mses = np.array([r["mse"] for r in per_seed], dtype=np.float64)
        maes = np.array([r["mae"] for r in per_seed], dtype=np.float64)
        ddof = 1 if len(per_seed) > 1 else 0
        return cls(
            per_seed=per_seed,
            mean_mse=float(mses.mean()),
            mean_mae=float(maes.mean()),
            std_mse=float(mses.std(ddof=ddof)),
            std_mae=float(maes.std(ddof=ddof)),
            **kw,
        )


def run_seeds(
    train_windows: Sequence[MultimodalWindow],
    test_windows: Sequence[MultimodalWindow],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    extra: dict | None = None,
) -> tuple[RunResult, list[DualForecaster]]:
    """Train once per seed and score each best checkpoint on ``test_windows``."""
    from .checkpoint import save_checkpoint

    start = time.perf_counter()
    per_seed, traces, models = [], [], []
    for seed in train_config.seeds:
        log_path = None
        if out_dir is not None:
            seed_dir = Path(out_dir) / f"seed{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            log_path = seed_dir / "train_log.jsonl"
        outcome = train_model(train_windows, model_config, train_config, seed=seed, log_path=log_path)
        metrics = evaluate_windows(outcome.model, test_windows)
        per_seed.append({"seed": seed, **metrics, "best_epoch": outcome.best_epoch, "steps": outcome.steps})
        traces.append(outcome.epoch_losses)
        models.append(outcome.model)
        if out_dir is not None:
            meta = {**(extra or {}), "seed": seed, "train": train_config.to_dict()}
            save_checkpoint(outcome.model, Path(out_dir) / f"seed{seed}" / "checkpoint", meta)
    result = RunResult.aggregate(
        per_seed,
        loss_trace=traces,
        wall_clock=time.perf_counter() - start,
        config_hash=config_hash(model_config.to_dict(), train_config.to_dict()),
        ablation=str(Ablation.parse(train_config.ablation)),
    )
    return result, models


def run_ablation_matrix(
    train_windows: Sequence[MultimodalWindow],
    test_windows: Sequence[MultimodalWindow],
    model_config: ModelConfig,
    train_config: TrainConfig,
    rows: Sequence[str] | str = "all",
    out_dir: str | Path | None = None,
) -> dict[str, RunResult]:
    """One multi-seed run per requested row key; rows sharing flags share a run."""
    keys = list(ABLATION_ROWS) if rows == "all" else list(rows)
    unknown = [k for k in keys if k not in ABLATION_ROWS]
    if unknown:
        raise ValueError(f"unknown ablation row(s) {unknown}; choose from {list(ABLATION_ROWS)}")
    done: dict[str, RunResult] = {}
    results: dict[str, RunResult] = {}
    for key in keys:
        label, flags = ABLATION_ROWS[key]
        canon = str(Ablation.parse(flags))
        if canon not in done:
            sub = Path(out_dir) / key if out_dir is not None else None
            res, _ = run_seeds(train_windows, test_windows, model_config, replace(train_config, ablation=canon), sub)
            done[canon] = res
        results[key] = replace(done[canon], tag=label)
    return results


def zero_shot(
    model: DualForecaster, windows: Sequence[MultimodalWindow], source: str, target: str
) -> RunResult:
    """Evaluate a trained model on another dataset without any adaptation."""
    metrics = evaluate_windows(model, windows)
    return RunResult.aggregate([{"seed": None, **metrics}], ablation=str(model.ablation), tag=f"{source}→{target}")


# -- diagnostics --------------------------------------------------------------


@torch.no_grad()
def alignment_arrays(model: DualForecaster, windows: Sequence[MultimodalWindow]) -> tuple[np.ndarray, np.ndarray | None]:
    """(n x n similarity, rows = series / cols = texts; per-head last-patch future attention (n, heads, q))."""
    if model.text is None:
        raise ValueError("model has no text branch; alignment export needs text")
    model.eval()
    out = model.forward_windows(windows)
    texts = out.text_cls
    if texts is None:
        texts = model.text.pool_history([w.history_text for w in windows], [w.series_id for w in windows]).cls
    sim = similarity_logits(out.ts_cls, texts, ContrastiveConfig(1.0, model.config.normalize_cls))
    attn = None
    if out.future_attention is not None:
        attn = out.future_attention[:, :, -1, :].double().numpy()
    return sim.double().numpy(), attn


def retrieval_accuracy(similarity: np.ndarray) -> dict[str, float]:
    n = similarity.shape[0]
    diag = np.arange(n)
    return {
        "text_to_series": float(np.mean(np.argmax(similarity, axis=0) == diag)),
        "series_to_text": float(np.mean(np.argmax(similarity, axis=1) == diag)),
    }


def export_alignment(
    model: DualForecaster, windows: Sequence[MultimodalWindow], out_dir: str | Path, plots: bool = True
) -> dict[str, str]:
    """Write the similarity matrix and attention rows as CSV with a JSON index (and PNG figures)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim, attn = alignment_arrays(model, windows)
    ids = [w.series_id for w in windows]
    files = {}
    sim_path = out_dir / "similarity.csv"
    with open(sim_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["series_id"] + ids)
        for sid, row in zip(ids, sim):
            wr.writerow([sid] + [repr(float(v)) for v in row])
    files["similarity"] = str(sim_path)
    if attn is not None:
        att_path = out_dir / "attention.csv"
        q = attn.shape[2]
        with open(att_path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["series_id", "head"] + [f"text_token_{j}" for j in range(q)])
            for sid, heads in zip(ids, attn):
                for h, row in enumerate(heads):
                    wr.writerow([sid, h] + [repr(float(v)) for v in row])
        files["attention"] = str(att_path)
    if plots:
        from . import plotting

        files["similarity_png"] = str(plotting.plot_similarity(sim, out_dir / "similarity.png"))
        if attn is not None:
            files["attention_png"] = str(plotting.plot_attention(attn[-1], out_dir / "attention.png"))
    index = {
        "series_ids": ids,
        "similarity": {"file": "similarity.csv", "rows": "series (time-series CLS)", "cols": "texts (history-text CLS)",
                       "normalized": model.config.normalize_cls},
        "attention": None if attn is None else {
            "file": "attention.csv",
            "query": "last patch token",
            "keys": "future-text pooled tokens",
            "heads": int(attn.shape[1]),
        },
        "retrieval": retrieval_accuracy(sim),
    }
    idx_path = out_dir / "alignment_index.json"
    idx_path.write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")
    files["index"] = str(idx_path)
    return files
