"""Shape captions for real series: IEPF segmentation, per-segment regression, templated text."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Manifest, MultimodalWindow, WindowingSpec, extract_windows, write_jsonl, write_manifest
from .stats import ols_slope_test

DEFAULT_EPSILON = 0.08
P_VALUE_THRESHOLD = 0.05
# Residual-MSE cutoffs (min-max normalized scale): low < 0.002 <= medium < 0.02 <= high.
NOISE_THRESHOLDS = (0.002, 0.02)
MIN_SEGMENT_POINTS = 3


@dataclass(frozen=True)
class IepfParams:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class Segment:
    start_index: int
    end_index: int  # exclusive
    slope: float
    p_value: float
    residual_mse: float
    trend_class: str
    noise_class: str

    def __post_init__(self):
        if self.end_index - self.start_index < 2:
            raise ValueError("a segment spans at least two points")


def minmax_normalize(series: Sequence[float]) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    span = hi - lo
    if span == 0.0:
        return np.zeros_like(x)
    return (x - lo) / span


def iepf_breakpoints(
    series: Sequence[float],
    params: IepfParams = IepfParams(),
    min_segment_points: int = 2,
) -> list[int]:
    """Indices kept by iterative end-point fitting on the min-max normalized series.

    Points live at (i / (n - 1), normalized value), so both axes span [0, 1].
    A chord is split at its farthest interior point when that perpendicular
    distance exceeds ``params.epsilon``. With ``min_segment_points > 2``,
    candidates leaving a side shorter than that are skipped.
    """
    y = minmax_normalize(series)
    n = len(y)
    if n < 2:
        raise ValueError("series needs at least two points")
    x = np.arange(n, dtype=np.float64) / (n - 1)
    keep = {0, n - 1}
    stack = [(0, n - 1)]
    m = max(2, int(min_segment_points))
    while stack:
        i, j = stack.pop()
        lo, hi = i + m - 1, j - m + 1  # admissible split points k in [lo, hi]
        lo = max(lo, i + 1)
        hi = min(hi, j - 1)
        if lo > hi:
            continue
        dx, dy = x[j] - x[i], y[j] - y[i]
        ks = np.arange(lo, hi + 1)
        dist = np.abs(dx * (y[i] - y[ks]) - (x[i] - x[ks]) * dy) / math.hypot(dx, dy)
        best = int(np.argmax(dist))
        if dist[best] > params.epsilon:
            k = int(ks[best])
            keep.add(k)
            stack.append((k, j))
            stack.append((i, k))
    return sorted(keep)


def classify_noise(residual_mse: float, thresholds: tuple[float, float] = NOISE_THRESHOLDS) -> str:
    if residual_mse < thresholds[0]:
        return "low"
    if residual_mse < thresholds[1]:
        return "medium"
    return "high"


def segment_stats(
    series: Sequence[float],
    start: int,
    end: int,
    noise_thresholds: tuple[float, float] = NOISE_THRESHOLDS,
) -> Segment:
    if end - start < 2:
        raise ValueError("segment needs end - start >= 2")
    fit = ols_slope_test(np.asarray(series, dtype=np.float64)[start:end])
    if fit.p_value < P_VALUE_THRESHOLD:
        trend = "increasing" if fit.slope > 0 else "decreasing"
    else:
        trend = "fluctuating"
    return Segment(
        start_index=start,
        end_index=end,
        slope=fit.slope,
        p_value=fit.p_value,
        residual_mse=fit.residual_mse,
        trend_class=trend,
        noise_class=classify_noise(fit.residual_mse, noise_thresholds),
    )


def segment_series(
    series: Sequence[float],
    params: IepfParams = IepfParams(),
    noise_thresholds: tuple[float, float] = NOISE_THRESHOLDS,
) -> list[Segment]:
    """Segments between consecutive breakpoints; neighbours share their breakpoint."""
    y = minmax_normalize(series)
    bps = iepf_breakpoints(y, params, min_segment_points=MIN_SEGMENT_POINTS)
    return [segment_stats(y, a, b + 1, noise_thresholds) for a, b in zip(bps[:-1], bps[1:])]


@dataclass
class ShapeCaptionBank:
    """Clause templates for shape captions, at least two variants per trend class."""

    clauses: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "increasing": (
                "{lead} the series is increasing with {noise} noise ({span})",
                "{lead} it rises, showing {noise} noise ({span})",
            ),
            "decreasing": (
                "{lead} the series is decreasing with {noise} noise ({span})",
                "{lead} it falls, showing {noise} noise ({span})",
            ),
            "fluctuating": (
                "{lead} the series is fluctuating with {noise} noise ({span})",
                "{lead} it moves sideways, showing {noise} noise ({span})",
            ),
        }
    )
    leads: tuple[str, ...] = ("first", "then", "next", "after that")
    final_lead: str = "finally"

    def __post_init__(self):
        for key, variants in self.clauses.items():
            if len(variants) < 2:
                raise ValueError(f"clause {key!r} needs at least two variants")

    def lead(self, position: int, total: int) -> str:
        if position == 0:
            return self.leads[0]
        if position == total - 1:
            return self.final_lead
        return self.leads[1 + (position - 1) % (len(self.leads) - 1)]


SHAPE_WORDS = {
    "increasing": ("increasing", "rises"),
    "decreasing": ("decreasing", "falls"),
    "fluctuating": ("fluctuating", "moves sideways"),
}


def render_segments(segments: Sequence[Segment], bank: ShapeCaptionBank | None = None) -> str:
    bank = bank or ShapeCaptionBank()
    clauses = []
    for pos, seg in enumerate(segments):
        variants = bank.clauses[seg.trend_class]
        text = variants[pos % len(variants)].format(
            lead=bank.lead(pos, len(segments)),
            noise=seg.noise_class,
            span=f"steps {seg.start_index}-{seg.end_index - 1}",
        )
        clauses.append(text)
    out = "; ".join(clauses) + "."
    return out[0].upper() + out[1:]


def caption_series(
    series: Sequence[float],
    params: IepfParams = IepfParams(),
    bank: ShapeCaptionBank | None = None,
) -> str:
    if len(series) < 2:
        raise ValueError("series needs at least two points")
    return render_segments(segment_series(series, params), bank)


# -- dataset captioning -------------------------------------------------------


def read_raw_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read a numeric CSV, one channel per column; a non-numeric first row is a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        return {}
    first = 1
    try:
        [float(c) for c in rows[0]]
        header = [f"ch{i}" for i in range(len(rows[0]))]
    except ValueError:
        header = [c.strip() or f"ch{i}" for i, c in enumerate(rows[0])]
        rows = rows[1:]
        first = 2
    cols: dict[str, list[float]] = {name: [] for name in header}
    for lineno, row in enumerate(rows, start=first):
        if len(row) != len(header):
            raise ValueError(f"row {lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            values = [float(cell) for cell in row]
        except ValueError:
            raise ValueError(f"row {lineno}: non-numeric cell") from None
        for name, v in zip(header, values):
            cols[name].append(v)
    return {name: np.asarray(v, dtype=np.float64) for name, v in cols.items()}


@dataclass
class CaptionReport:
    n_channels: int = 0
    n_windows: int = 0
    segments_per_caption: dict[str, int] = field(default_factory=dict)
    trend_classes: dict[str, int] = field(default_factory=dict)
    noise_classes: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    epsilon: float = DEFAULT_EPSILON
    noise_thresholds: tuple[float, float] = NOISE_THRESHOLDS
    p_value_threshold: float = P_VALUE_THRESHOLD
    # epsilon and the noise cutoffs are tunable defaults; both are written to the manifest
    defaults_are_engineering_choices: bool = True

    def to_dict(self):
        return asdict(self)


def caption_windows(
    channels: dict[str, np.ndarray],
    spec: WindowingSpec,
    params: IepfParams = IepfParams(),
    dataset_name: str = "raw",
) -> tuple[list[MultimodalWindow], CaptionReport]:
    report = CaptionReport(epsilon=params.epsilon)
    seg_counts: Counter = Counter()
    trends: Counter = Counter()
    noises: Counter = Counter()
    windows: list[MultimodalWindow] = []
    report.n_channels = len(channels)
    for name, values in channels.items():
        if not np.all(np.isfinite(values)):
            report.errors.append(f"{name}: non-finite values, channel skipped")
            continue
        spans = extract_windows(values, spec, caption=None, series_id=f"{dataset_name}-{name}")
        if not spans:
            report.errors.append(f"{name}: shorter than lookback+horizon, no windows")
        for w in spans:
            try:
                texts = []
                for part in (w.history, w.future):
                    segs = segment_series(part, params)
                    seg_counts[str(len(segs))] += 1
                    trends.update(s.trend_class for s in segs)
                    noises.update(s.noise_class for s in segs)
                    texts.append(render_segments(segs))
            except (ValueError, ArithmeticError) as exc:
                report.errors.append(f"{w.series_id}: {exc}")
                continue
            windows.append(
                MultimodalWindow(w.series_id, w.history, w.future, texts[0], texts[1])
            )
    report.n_windows = len(windows)
    report.segments_per_caption = dict(sorted(seg_counts.items(), key=lambda kv: int(kv[0])))
    report.trend_classes = dict(sorted(trends.items()))
    report.noise_classes = dict(sorted(noises.items()))
    return windows, report


def caption_dataset(
    raw_path: str | Path,
    spec: WindowingSpec,
    params: IepfParams = IepfParams(),
    out_path: str | Path | None = None,
    holdout_fraction: float = 0.2,
) -> tuple[list[MultimodalWindow], CaptionReport]:
    """Caption every sliding window of every channel of a raw CSV.

    Failures are collected per record in the report and never abort the run.
    """
    raw_path = Path(raw_path)
    try:
        channels = read_raw_csv(raw_path)
    except ValueError as exc:
        report = CaptionReport(epsilon=params.epsilon, errors=[f"{raw_path}: {exc}"])
        channels, windows = {}, []
    else:
        windows, report = caption_windows(channels, spec, params, dataset_name=raw_path.stem)
    if not channels and not report.errors:
        report.errors.append(f"{raw_path}: no data rows")
    if out_path is not None:
        write_jsonl(out_path, windows)
        write_manifest(
            out_path,
            Manifest(
                lookback=spec.lookback,
                horizon=spec.horizon,
                stride=spec.stride,
                dataset_name=raw_path.stem,
                captioned=True,
                holdout_fraction=holdout_fraction,
                extra={
                    "captioner": {
                        "epsilon": params.epsilon,
                        "noise_thresholds": list(NOISE_THRESHOLDS),
                        "p_value_threshold": P_VALUE_THRESHOLD,
                        "defaults_are_engineering_choices": True,
                    }
                },
            ),
        )
    return windows, report
