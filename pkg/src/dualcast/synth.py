"""Compositional synthetic series (trend, seasonality, noise, optional state switch) with paired captions."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .data import Manifest, MultimodalWindow, write_jsonl, write_manifest

TREND_KINDS = ("linear", "exponential")
SEASON_KINDS = ("cosine", "linear", "exponential", "m_shape", "trapezoidal")
NOISE_VARIANCE = {"none": 0.0, "low": 0.01, "medium": 0.1, "high": 0.5}
COMBINATIONS = ("additive", "multiplicative")
SWITCH_COMPONENTS = ("trend", "seasonality", "noise")

# Positive floor for trends feeding a multiplicative combination.
MULTIPLICATIVE_TREND_FLOOR = 0.5
# Seasonal modulation depth per unit amplitude under multiplicative combination.
MULTIPLICATIVE_DEPTH = 0.5

# Unit piecewise-linear templates over one period, as (phase, value) knots.
_M_SHAPE = ((0.0, -1.0), (0.25, 1.0), (0.5, -0.2), (0.75, 1.0), (1.0, -1.0))
_TRAPEZOID = ((0.0, -1.0), (0.2, 1.0), (0.5, 1.0), (0.7, -1.0), (1.0, -1.0))


@dataclass(frozen=True)
class Switch:
    component: str
    index: int
    value: float  # new signed trend rate, new period, or index into NOISE_LEVELS_ORDER


NOISE_LEVELS_ORDER = ("none", "low", "medium", "high")


@dataclass(frozen=True)
class ComponentSpec:
    lookback: int
    horizon: int
    trend_kind: str
    trend_rate: float  # per-step slope (linear) or rate r in a*exp(r*t/L) (exponential)
    trend_level: float  # intercept (linear) or a > 0 (exponential)
    season_kind: str
    period: int
    amplitude: float
    phase: float
    noise_level: str
    combination: str
    switch: Switch | None = None
    trend_offset: float = 0.0

    def __post_init__(self):
        if self.trend_kind not in TREND_KINDS:
            raise ValueError(f"unknown trend kind {self.trend_kind!r}")
        if self.season_kind not in SEASON_KINDS:
            raise ValueError(f"unknown seasonality kind {self.season_kind!r}")
        if self.noise_level not in NOISE_VARIANCE:
            raise ValueError(f"unknown noise level {self.noise_level!r}")
        if self.combination not in COMBINATIONS:
            raise ValueError(f"unknown combination {self.combination!r}")
        if not 4 <= self.period <= self.lookback / 2:
            raise ValueError(f"period {self.period} outside [4, L/2]")
        if self.trend_kind == "exponential" and self.trend_level <= 0:
            raise ValueError("exponential trend level must be positive")
        if self.switch is not None:
            sw = self.switch
            if sw.component not in SWITCH_COMPONENTS:
                raise ValueError(f"unknown switch component {sw.component!r}")
            if not 0 < sw.index < self.length:
                raise ValueError(f"switch index {sw.index} not strictly inside [0, {self.length})")
            if sw.component == "seasonality" and not 4 <= sw.value <= self.lookback / 2:
                raise ValueError("post-switch period outside [4, L/2]")

    @property
    def length(self) -> int:
        return self.lookback + self.horizon

    @property
    def trend_direction(self) -> str:
        return "up" if self.trend_rate > 0 else "down"

    @property
    def noise_variance(self) -> float:
        return NOISE_VARIANCE[self.noise_level]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ComponentSpec":
        d = dict(d)
        if d.get("switch") is not None:
            d["switch"] = Switch(**d["switch"])
        return cls(**d)


@dataclass
class SpecDistribution:
    """Sampling ranges for :func:`sample_spec`; every field is JSON-overridable."""

    lookback: int = 200
    horizon: int = 30
    trend_kinds: Sequence[str] = TREND_KINDS
    season_kinds: Sequence[str] = SEASON_KINDS
    noise_levels: Sequence[str] = ("low", "medium", "high")
    combinations: Sequence[str] = COMBINATIONS
    switch_probability: float = 0.5
    switch_components: Sequence[str] = SWITCH_COMPONENTS
    switch_range: tuple[float, float] = (0.3, 0.9)
    period_range: tuple[int, int] = (8, 48)
    amplitude_range: tuple[float, float] = (0.5, 1.5)
    linear_change_range: tuple[float, float] = (0.5, 3.0)  # |slope| * L
    exp_rate_range: tuple[float, float] = (0.3, 2.0)
    level_range: tuple[float, float] = (-1.0, 1.0)
    exp_level_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        for name, allowed in (
            ("trend_kinds", TREND_KINDS),
            ("season_kinds", SEASON_KINDS),
            ("noise_levels", tuple(NOISE_VARIANCE)),
            ("combinations", COMBINATIONS),
            ("switch_components", SWITCH_COMPONENTS),
        ):
            values = tuple(getattr(self, name))
            bad = [v for v in values if v not in allowed]
            if bad or not values:
                raise ValueError(f"{name}: invalid or empty choices {bad}")
            setattr(self, name, values)
        if not 0.0 <= self.switch_probability <= 1.0:
            raise ValueError("switch_probability must lie in [0, 1]")
        lo, hi = self.exp_rate_range
        if not 0 < lo <= hi <= 2.0:
            raise ValueError("exp_rate_range must satisfy 0 < lo <= hi <= 2")
        self.switch_range = tuple(self.switch_range)
        self.period_range = tuple(self.period_range)

    @classmethod
    def from_json(cls, path: str | Path) -> "SpecDistribution":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# Named overrides of SpecDistribution. "switch_trend" concentrates trend reversals
# around the forecast origin so only the captions reveal them; "switch_season"
# is a disjoint family (period changes, other seasonal shapes) for transfer tests.
FAMILIES: dict[str, dict[str, Any]] = {
    "default": {},
    "switch_trend": {
        "switch_probability": 0.65,
        "switch_range": (0.77, 0.87),
        "noise_levels": ("low",),
        "switch_components": ("trend",),
        "linear_change_range": (2.0, 5.0),
        "trend_kinds": ("linear",),
        "combinations": ("additive",),
        "season_kinds": ("cosine",),
        "period_range": (12, 24),
    },
    "switch_season": {
        "switch_probability": 0.65,
        "switch_range": (0.77, 0.87),
        "noise_levels": ("low",),
        "switch_components": ("seasonality",),
        "linear_change_range": (0.5, 2.0),
        "trend_kinds": ("linear",),
        "combinations": ("additive",),
        "season_kinds": ("trapezoidal", "m_shape"),
        "period_range": (12, 24),
    },
}


def family_distribution(name: str, lookback: int = 200, horizon: int = 30, **overrides) -> "SpecDistribution":
    if name not in FAMILIES:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    return SpecDistribution(lookback=lookback, horizon=horizon, **{**FAMILIES[name], **overrides})


# -- sampling -----------------------------------------------------------------


def _rng(seed: int | Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(seed)


def _sample_trend_rate(kind: str, direction: float, dist: SpecDistribution, rng) -> float:
    if kind == "linear":
        return direction * rng.uniform(*dist.linear_change_range) / dist.lookback
    return direction * rng.uniform(*dist.exp_rate_range)


def sample_spec(rng_seed: int | Sequence[int], dist: SpecDistribution | None = None) -> ComponentSpec:
    dist = dist or SpecDistribution()
    rng = _rng(rng_seed)
    L, h = dist.lookback, dist.horizon
    n = L + h
    trend_kind = str(rng.choice(dist.trend_kinds))
    direction = 1.0 if rng.random() < 0.5 else -1.0
    rate = _sample_trend_rate(trend_kind, direction, dist, rng)
    if trend_kind == "linear":
        level = rng.uniform(*dist.level_range)
    else:
        level = rng.uniform(*dist.exp_level_range)
    p_lo = max(4, int(dist.period_range[0]))
    p_hi = min(int(dist.period_range[1]), L // 2)
    if p_lo > p_hi:
        raise ValueError(f"no admissible period in [{p_lo}, {p_hi}] for L={L}")
    period = int(rng.integers(p_lo, p_hi + 1))
    season_kind = str(rng.choice(dist.season_kinds))
    amplitude = float(rng.uniform(*dist.amplitude_range))
    phase = float(rng.random())
    noise_level = str(rng.choice(dist.noise_levels))
    combination = str(rng.choice(dist.combinations))

    switch = None
    if rng.random() < dist.switch_probability:
        component = str(rng.choice(dist.switch_components))
        lo = max(1, int(math.ceil(dist.switch_range[0] * n)))
        hi = min(n - 1, int(math.floor(dist.switch_range[1] * n)))
        index = int(rng.integers(lo, hi + 1))
        if component == "trend":
            value = _sample_trend_rate(trend_kind, -direction, dist, rng)
        elif component == "seasonality":
            choices = [p for p in range(p_lo, p_hi + 1) if abs(p - period) >= max(2, period // 4)]
            value = float(rng.choice(choices)) if choices else float(period)
        else:
            others = [lv for lv in dist.noise_levels if lv != noise_level] or [noise_level]
            value = float(NOISE_LEVELS_ORDER.index(str(rng.choice(others))))
        switch = Switch(component, index, float(value))

    spec = ComponentSpec(
        lookback=L,
        horizon=h,
        trend_kind=trend_kind,
        trend_rate=float(rate),
        trend_level=float(level),
        season_kind=season_kind,
        period=period,
        amplitude=amplitude,
        phase=phase,
        noise_level=noise_level,
        combination=combination,
        switch=switch,
    )
    return with_positive_trend(spec)


# -- rendering ----------------------------------------------------------------


def _raw_trend(spec: ComponentSpec) -> np.ndarray:
    t = np.arange(spec.length, dtype=np.float64)
    sw = spec.switch if spec.switch is not None and spec.switch.component == "trend" else None
    if spec.trend_kind == "linear":
        if sw is None:
            return spec.trend_level + spec.trend_rate * t
        k = sw.index
        return np.where(
            t <= k,
            spec.trend_level + spec.trend_rate * t,
            spec.trend_level + spec.trend_rate * k + sw.value * (t - k),
        )
    L = spec.lookback
    if sw is None:
        return spec.trend_level * np.exp(spec.trend_rate * t / L)
    k = sw.index
    return np.where(
        t <= k,
        spec.trend_level * np.exp(spec.trend_rate * t / L),
        spec.trend_level * np.exp(spec.trend_rate * k / L + sw.value * (t - k) / L),
    )


def with_positive_trend(spec: ComponentSpec) -> ComponentSpec:
    """Shift a multiplicative spec's trend so it stays above a positive floor."""
    if spec.combination != "multiplicative":
        return spec
    low = float(_raw_trend(spec).min())
    needed = max(0.0, MULTIPLICATIVE_TREND_FLOOR - low)
    if needed <= spec.trend_offset:
        return spec
    return replace(spec, trend_offset=needed)


def trend_component(spec: ComponentSpec) -> np.ndarray:
    return _raw_trend(spec) + spec.trend_offset


def _season_template(kind: str, frac: np.ndarray) -> np.ndarray:
    if kind == "cosine":
        return np.cos(2.0 * np.pi * frac)
    if kind == "linear":
        return 2.0 * frac - 1.0
    if kind == "exponential":
        return 2.0 * np.expm1(3.0 * frac) / math.expm1(3.0) - 1.0
    knots = _M_SHAPE if kind == "m_shape" else _TRAPEZOID
    xs, ys = zip(*knots)
    return np.interp(frac, xs, ys)


def seasonal_component(spec: ComponentSpec) -> np.ndarray:
    t = np.arange(spec.length, dtype=np.float64)
    cycles = t / spec.period
    sw = spec.switch
    if sw is not None and sw.component == "seasonality":
        k = sw.index
        # Phase stays continuous across the period change.
        cycles = np.where(t < k, cycles, k / spec.period + (t - k) / sw.value)
    frac = np.mod(cycles + spec.phase, 1.0)
    return spec.amplitude * _season_template(spec.season_kind, frac)


def noise_std_profile(spec: ComponentSpec) -> np.ndarray:
    std = np.full(spec.length, math.sqrt(spec.noise_variance))
    sw = spec.switch
    if sw is not None and sw.component == "noise":
        std[sw.index :] = math.sqrt(NOISE_VARIANCE[NOISE_LEVELS_ORDER[int(sw.value)]])
    return std


def deterministic_series(spec: ComponentSpec) -> np.ndarray:
    spec = with_positive_trend(spec)
    trend = trend_component(spec)
    season = seasonal_component(spec)
    if spec.combination == "additive":
        return trend + season
    return trend * (1.0 + MULTIPLICATIVE_DEPTH * season)


def render_series(spec: ComponentSpec, rng_seed: int | Sequence[int]) -> np.ndarray:
    """Compose trend, seasonality and noise into a length ``L + h`` series."""
    base = deterministic_series(spec)
    std = noise_std_profile(spec)
    if not std.any():
        return base
    return base + std * _rng(rng_seed).standard_normal(spec.length)


# -- captions -----------------------------------------------------------------


SLOT_WORDS: dict[str, dict[str, tuple[str, ...]]] = {
    "direction": {"up": ("upward", "rising"), "down": ("downward", "falling")},
    "noise": {
        "none": ("negligible", "barely perceptible"),
        "low": ("low", "slight"),
        "medium": ("moderate", "medium"),
        "high": ("high", "heavy"),
    },
}

SWITCH_WORDS = ("transits", "switches", "shifts")

SEASON_NAMES = {
    "cosine": "cosine",
    "linear": "sawtooth",
    "exponential": "exponential ramp",
    "m_shape": "M-shaped",
    "trapezoidal": "trapezoidal",
}


def _default_templates() -> dict[tuple[str, str], tuple[str, ...]]:
    bank: dict[tuple[str, str], tuple[str, ...]] = {
        ("trend", "linear"): (
            "The series follows a linear {direction} trend.",
            "A steady {direction} linear trend is present.",
        ),
        ("trend", "exponential"): (
            "The series follows an exponential {direction} trend.",
            "An exponential {direction} trend dominates the level.",
        ),
        ("noise", "gaussian"): (
            "Noise is {noise}.",
            "The series carries {noise} noise.",
        ),
        ("combination", "additive"): (
            "Seasonal swings keep a constant size.",
            "The seasonal amplitude stays fixed as the level moves.",
        ),
        ("combination", "multiplicative"): (
            "Seasonal swings scale with the level.",
            "The seasonal amplitude grows and shrinks with the level.",
        ),
        ("switch", "trend"): (
            "The trend {switch_verb} from {direction} to {new_direction} {when}.",
            "Then the trend {switch_verb} to {new_direction} {when}, after being {direction}.",
        ),
        ("switch", "seasonality"): (
            "The seasonal period {switch_verb} from {period} to {new_period} steps {when}.",
            "Then the cycle {switch_verb} to a period of {new_period} steps {when}, from {period}.",
        ),
        ("switch", "noise"): (
            "The noise {switch_verb} from {noise} to {new_noise} {when}.",
            "Then the noise level {switch_verb} to {new_noise} {when}, after being {noise}.",
        ),
    }
    for kind, name in SEASON_NAMES.items():
        bank[("seasonality", kind)] = (
            f"Its seasonal pattern is {name} with a period of {{period}} steps.",
            f"{name[0].upper() + name[1:]} cycles recur every {{period}} steps.",
        )
    return bank


@dataclass
class CaptionTemplateBank:
    templates: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=_default_templates)
    slots: dict[str, dict[str, tuple[str, ...]]] = field(default_factory=lambda: dict(SLOT_WORDS))

    def __post_init__(self):
        for key, variants in self.templates.items():
            if len(variants) < 2:
                raise ValueError(f"template pair {key} needs at least two variants")

    def pick(self, component: str, state: str, rng: np.random.Generator) -> str:
        try:
            variants = self.templates[(component, state)]
        except KeyError:
            raise KeyError(f"caption bank does not cover ({component!r}, {state!r})") from None
        return variants[int(rng.integers(len(variants)))]

    def word(self, slot: str, value: str, rng: np.random.Generator) -> str:
        try:
            variants = self.slots[slot][value]
        except KeyError:
            raise KeyError(f"caption bank does not cover ({slot!r}, {value!r})") from None
        return variants[int(rng.integers(len(variants)))]


def _fmt_when_horizon(steps: int) -> str:
    return f"after about {steps} steps"


def _fmt_when_history(steps_ago: int) -> str:
    return f"about {steps_ago} steps before the end"


def _segment_sentences(
    spec: ComponentSpec,
    bank: CaptionTemplateBank,
    rng: np.random.Generator,
    state: dict[str, Any],
    switch_phrase: str | None,
) -> list[str]:
    words = {
        "direction": bank.word("direction", state["direction"], rng),
        "noise": bank.word("noise", state["noise"], rng),
        "period": str(state["period"]),
    }
    sentences = [
        bank.pick("trend", spec.trend_kind, rng).format(**words),
        bank.pick("seasonality", spec.season_kind, rng).format(**words),
        bank.pick("noise", "gaussian", rng).format(**words),
        bank.pick("combination", spec.combination, rng).format(**words),
    ]
    if switch_phrase is not None:
        sw = spec.switch
        new = dict(words)
        new["switch_verb"] = SWITCH_WORDS[int(rng.integers(len(SWITCH_WORDS)))]
        new["when"] = switch_phrase
        if sw.component == "trend":
            new["new_direction"] = bank.word("direction", "up" if sw.value > 0 else "down", rng)
        elif sw.component == "seasonality":
            new["new_period"] = str(int(sw.value))
        else:
            new["new_noise"] = bank.word("noise", NOISE_LEVELS_ORDER[int(sw.value)], rng)
        sentences.append(bank.pick("switch", sw.component, rng).format(**new))
    return sentences


def _states(spec: ComponentSpec) -> tuple[dict[str, Any], dict[str, Any]]:
    before = {"direction": spec.trend_direction, "noise": spec.noise_level, "period": spec.period}
    after = dict(before)
    sw = spec.switch
    if sw is not None:
        if sw.component == "trend":
            after["direction"] = "up" if sw.value > 0 else "down"
        elif sw.component == "seasonality":
            after["period"] = int(sw.value)
        else:
            after["noise"] = NOISE_LEVELS_ORDER[int(sw.value)]
    return before, after


def render_captions(
    spec: ComponentSpec,
    bank: CaptionTemplateBank | None = None,
    rng_seed: int | Sequence[int] = 0,
) -> tuple[str, str]:
    """Describe the history span ``[0, L)`` and the future span ``[L, L+h)``.

    A switch is mentioned only in the text whose span contains it; the
    other text describes the state in force throughout its span.
    """
    bank = bank or CaptionTemplateBank()
    rng = _rng(rng_seed)
    before, after = _states(spec)
    L = spec.lookback
    sw = spec.switch
    if sw is None:
        hist = _segment_sentences(spec, bank, rng, before, None)
        fut = _segment_sentences(spec, bank, rng, before, None)
    elif sw.index < L:
        hist = _segment_sentences(spec, bank, rng, before, _fmt_when_history(L - sw.index))
        fut = _segment_sentences(spec, bank, rng, after, None)
    else:
        hist = _segment_sentences(spec, bank, rng, before, None)
        fut = _segment_sentences(spec, bank, rng, before, _fmt_when_horizon(sw.index - L))
    return " ".join(hist), " ".join(fut)


def _first_match(text: str, table: dict[str, tuple[str, ...]]) -> str | None:
    best: tuple[int, str] | None = None
    for value, variants in table.items():
        for v in variants:
            m = re.search(r"\b" + re.escape(v) + r"\b", text)
            if m and (best is None or m.start() < best[0]):
                best = (m.start(), value)
    return best[1] if best else None


def parse_caption(
    history_text: str, future_text: str, bank: CaptionTemplateBank | None = None
) -> dict[str, Any]:
    """Recover (initial trend direction, initial noise level, switch presence) from a caption pair."""
    bank = bank or CaptionTemplateBank()
    switch_re = re.compile(r"\b(" + "|".join(SWITCH_WORDS) + r")\b")
    return {
        "trend_direction": _first_match(history_text, bank.slots["direction"]),
        "noise_level": _first_match(history_text, bank.slots["noise"]),
        "has_switch": bool(switch_re.search(history_text) or switch_re.search(future_text)),
    }


# -- dataset assembly ---------------------------------------------------------


def generate_window(
    index: int,
    seed: int,
    dist: SpecDistribution,
    bank: CaptionTemplateBank | None = None,
) -> tuple[MultimodalWindow, ComponentSpec]:
    spec = sample_spec((seed, index, 0), dist)
    series = render_series(spec, (seed, index, 1))
    hist_text, fut_text = render_captions(spec, bank, (seed, index, 2))
    L = spec.lookback
    window = MultimodalWindow(
        series_id=f"synth-{index:05d}",
        history=series[:L],
        future=series[L:],
        history_text=hist_text,
        future_text=fut_text,
    )
    return window, spec


def build_dataset(
    n_samples: int,
    dist: SpecDistribution | None = None,
    seed: int = 7,
    bank: CaptionTemplateBank | None = None,
) -> tuple[list[MultimodalWindow], list[ComponentSpec]]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dist = dist or SpecDistribution()
    windows, specs = [], []
    for i in range(n_samples):
        w, s = generate_window(i, seed, dist, bank)
        windows.append(w)
        specs.append(s)
    return windows, specs


def write_dataset(
    path: str | Path,
    n_samples: int,
    dist: SpecDistribution | None = None,
    seed: int = 7,
    holdout_fraction: float = 0.2,
    dataset_name: str = "synthetic",
) -> tuple[Path, Path]:
    dist = dist or SpecDistribution()
    windows, _ = build_dataset(n_samples, dist, seed)
    out = write_jsonl(path, windows)
    manifest = Manifest(
        lookback=dist.lookback,
        horizon=dist.horizon,
        stride=dist.lookback + dist.horizon,
        dataset_name=dataset_name,
        captioned=True,
        holdout_fraction=holdout_fraction,
        extra={"generator": {"seed": seed, "n_samples": n_samples, "distribution": dist.to_dict()}},
    )
    return out, write_manifest(path, manifest)
