"""Multimodal window format, sliding windows, instance normalization and JSONL I/O."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

STD_FLOOR = 1e-5

RECORD_KEYS = ("series_id", "history", "future", "history_text", "future_text")


class DatasetError(ValueError):
    """Raised for malformed dataset files or records violating a windowing spec."""


@dataclass(frozen=True)
class MultimodalWindow:
    series_id: str
    history: tuple[float, ...]
    future: tuple[float, ...]
    history_text: str = ""
    future_text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(float(v) for v in self.history))
        object.__setattr__(self, "future", tuple(float(v) for v in self.future))
        if not all(math.isfinite(v) for v in self.history + self.future):
            raise DatasetError(f"record {self.series_id!r}: non-finite value")

    @property
    def lookback(self) -> int:
        return len(self.history)

    @property
    def horizon(self) -> int:
        return len(self.future)

    def to_dict(self) -> dict[str, Any]:
        return {
            "series_id": self.series_id,
            "history": list(self.history),
            "future": list(self.future),
            "history_text": self.history_text,
            "future_text": self.future_text,
        }


@dataclass(frozen=True)
class WindowingSpec:
    lookback: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        for name in ("lookback", "horizon", "stride"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    def count(self, length: int) -> int:
        span = length - self.lookback - self.horizon
        return span // self.stride + 1 if span >= 0 else 0


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= STD_FLOOR:
            raise ValueError(f"std must be >= {STD_FLOOR}, got {self.std}")


@dataclass
class StudentTParams:
    """Per-step location, scale and degrees of freedom.

    Fields may be numpy arrays or torch tensors; only elementwise
    arithmetic is applied to them here.
    """

    location: Any
    scale: Any
    dof: Any


def extract_windows(
    series: Sequence[float],
    spec: WindowingSpec,
    caption: Callable[[np.ndarray], str] | None = None,
    series_id: str = "series",
) -> list[MultimodalWindow]:
    """Slide a (lookback + horizon) window over ``series`` with the given stride.

    ``caption`` is applied independently to each history and future slice;
    without it both text fields are empty.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not np.all(np.isfinite(values)):
        raise DatasetError(f"{series_id}: series contains non-finite values")
    n = spec.count(len(values))
    if n == 0:
        warnings.warn(
            f"{series_id}: length {len(values)} shorter than lookback+horizon "
            f"({spec.lookback + spec.horizon}); no windows extracted",
            stacklevel=2,
        )
        return []
    windows = []
    for k in range(n):
        t = k * spec.stride + spec.lookback
        hist = values[t - spec.lookback : t]
        fut = values[t : t + spec.horizon]
        windows.append(
            MultimodalWindow(
                series_id=f"{series_id}-w{k:05d}",
                history=hist,
                future=fut,
                history_text=caption(hist) if caption else "",
                future_text=caption(fut) if caption else "",
            )
        )
    return windows


def normalize_history(history: Sequence[float]) -> tuple[np.ndarray, NormalizationStats]:
    x = np.asarray(history, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("history must be a vector of length >= 2")
    if not np.all(np.isfinite(x)):
        raise ValueError("history contains non-finite values")
    # Shifting by x[0] keeps the mean exact for constant input, where the std floor would magnify rounding.
    mean = float(x[0] + (x - x[0]).mean())
    std = max(float(x.std()), STD_FLOOR)
    return (x - mean) / std, NormalizationStats(mean, std)


def denormalize_values(values, stats: NormalizationStats):
    return values * stats.std + stats.mean


def denormalize_forecast(params: StudentTParams, stats: NormalizationStats) -> StudentTParams:
    return StudentTParams(
        location=params.location * stats.std + stats.mean,
        scale=params.scale * stats.std,
        dof=params.dof,
    )


def split_windows(
    windows: Sequence[MultimodalWindow], holdout_fraction: float
) -> tuple[list[MultimodalWindow], list[MultimodalWindow]]:
    """Positional train/test split: the trailing fraction is held out."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in [0, 1)")
    n_test = int(round(len(windows) * holdout_fraction))
    cut = len(windows) - n_test
    return list(windows[:cut]), list(windows[cut:])


# -- JSON Lines persistence -------------------------------------------------


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def write_jsonl(path: str | Path, windows: Iterable[MultimodalWindow]) -> Path:
    """Write windows one JSON object per line.

    Floats use Python's shortest round-trip repr, so reading the file back
    yields identical values and rewriting it yields identical bytes.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in windows:
            fh.write(_dumps(w.to_dict()))
            fh.write("\n")
    return path


def _parse_record(obj: Any, lineno: int) -> MultimodalWindow:
    if not isinstance(obj, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    keys = set(obj)
    if keys != set(RECORD_KEYS):
        missing = sorted(set(RECORD_KEYS) - keys)
        extra = sorted(keys - set(RECORD_KEYS))
        raise DatasetError(f"line {lineno}: bad keys (missing={missing}, unexpected={extra})")
    if not isinstance(obj["series_id"], str):
        raise DatasetError(f"line {lineno}: series_id must be a string")
    for key in ("history", "future"):
        seq = obj[key]
        if not isinstance(seq, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq
        ):
            raise DatasetError(f"line {lineno}: {key} must be a list of numbers")
    for key in ("history_text", "future_text"):
        if not isinstance(obj[key], str):
            raise DatasetError(f"line {lineno}: {key} must be a string")
    try:
        return MultimodalWindow(**obj)
    except DatasetError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None


def read_jsonl(
    path: str | Path,
    spec: WindowingSpec | None = None,
    captioned: bool = False,
) -> list[MultimodalWindow]:
    """Read and validate a dataset file.

    With ``spec`` every record must have exactly ``spec.lookback`` history
    and ``spec.horizon`` future values; with ``captioned`` both text fields
    must be non-empty.
    """
    windows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            w = _parse_record(obj, lineno)
            if spec is not None and (w.lookback != spec.lookback or w.horizon != spec.horizon):
                raise DatasetError(
                    f"line {lineno}: record {w.series_id!r} has history/future lengths "
                    f"{w.lookback}/{w.horizon}, expected {spec.lookback}/{spec.horizon}"
                )
            if captioned and not (w.history_text and w.future_text):
                raise DatasetError(f"line {lineno}: record {w.series_id!r} is missing a caption")
            windows.append(w)
    return windows


# -- manifest sidecar --------------------------------------------------------


@dataclass
class Manifest:
    lookback: int
    horizon: int
    stride: int
    dataset_name: str
    captioned: bool
    holdout_fraction: float = 0.2
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def spec(self) -> WindowingSpec:
        return WindowingSpec(self.lookback, self.horizon, self.stride)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "L": self.lookback,
            "h": self.horizon,
            "stride": self.stride,
            "dataset_name": self.dataset_name,
            "captioned": self.captioned,
            "holdout_fraction": self.holdout_fraction,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Manifest":
        d = dict(d)
        kwargs = dict(
            lookback=int(d.pop("L")),
            horizon=int(d.pop("h")),
            stride=int(d.pop("stride")),
            dataset_name=str(d.pop("dataset_name")),
            captioned=bool(d.pop("captioned")),
            holdout_fraction=float(d.pop("holdout_fraction", 0.2)),
        )
        return cls(extra=d, **kwargs)


def manifest_path(data_path: str | Path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".manifest.json")


def write_manifest(data_path: str | Path, manifest: Manifest) -> Path:
    out = manifest_path(data_path)
    out.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def read_manifest(data_path: str | Path) -> Manifest | None:
    p = manifest_path(data_path)
    if not p.exists():
        return None
    return Manifest.from_dict(json.loads(p.read_text(encoding="utf-8")))


def load_dataset(path: str | Path) -> tuple[list[MultimodalWindow], Manifest | None]:
    """Read a dataset, validating it against its manifest when one exists."""
    manifest = read_manifest(path)
    if manifest is None:
        return read_jsonl(path), None
    return read_jsonl(path, manifest.spec, captioned=manifest.captioned), manifest
