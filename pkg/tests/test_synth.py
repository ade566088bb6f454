import dataclasses
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcast.data import WindowingSpec, load_dataset
from dualcast.synth import (
    FAMILIES,
    SEASON_KINDS,
    SLOT_WORDS,
    SWITCH_WORDS,
    CaptionTemplateBank,
    ComponentSpec,
    SpecDistribution,
    Switch,
    build_dataset,
    deterministic_series,
    family_distribution,
    parse_caption,
    render_captions,
    render_series,
    sample_spec,
    write_dataset,
)


def _spec(**kw):
    base = dict(
        lookback=40, horizon=10, trend_kind="linear", trend_rate=0.0, trend_level=0.0,
        season_kind="cosine", period=8, amplitude=0.0, phase=0.0, noise_level="none",
        combination="additive",
    )
    base.update(kw)
    return ComponentSpec(**base)


def test_sample_spec_deterministic():
    assert sample_spec(42) == sample_spec(42)
    assert sample_spec(42) != sample_spec(43)


def test_trend_kind_frequency():
    counts = Counter(sample_spec((9, i)).trend_kind for i in range(10_000))
    assert abs(counts["linear"] / 10_000 - 0.5) <= 0.02


def test_no_switch_when_probability_zero():
    dist = SpecDistribution(switch_probability=0.0)
    assert all(sample_spec(i, dist).switch is None for i in range(300))


def test_switch_index_range_default():
    dist = SpecDistribution()
    n = dist.lookback + dist.horizon
    idx = [s.switch.index for s in (sample_spec(i, dist) for i in range(2000)) if s.switch]
    assert min(idx) >= 0.3 * n and max(idx) <= 0.9 * n
    assert any(i >= dist.lookback for i in idx) and any(i < dist.lookback for i in idx)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_spec_invariants(seed):
    s = sample_spec(seed)
    assert 4 <= s.period <= s.lookback / 2
    if s.switch:
        assert 0 < s.switch.index < s.length
    x = render_series(s, seed)
    assert x.shape == (s.length,) and np.all(np.isfinite(x))
    if s.combination == "multiplicative":
        assert np.all(deterministic_series(s) > 0)


def test_spec_validation():
    with pytest.raises(ValueError, match="period"):
        _spec(period=3)
    with pytest.raises(ValueError, match="switch index"):
        _spec(switch=Switch("trend", 50, 1.0))
    with pytest.raises(ValueError):
        _spec(trend_kind="cubic")


def test_linear_trend_recovered():
    s = _spec(trend_rate=0.37, trend_level=1.5)
    x = render_series(s, 0)
    slope = np.polyfit(np.arange(len(x)), x, 1)[0]
    assert abs(slope - 0.37) < 1e-9
    np.testing.assert_allclose(x, 1.5 + 0.37 * np.arange(50), atol=1e-12)


def test_cosine_autocorrelation_peak():
    s = _spec(lookback=200, horizon=40, amplitude=1.0, period=17)
    x = render_series(s, 0)
    x = x - x.mean()
    ac = [np.dot(x[:-lag], x[lag:]) / (len(x) - lag) for lag in range(1, 26)]  # lags below 1.5 periods
    assert int(np.argmax(ac)) + 1 == 17


def test_switch_argmax():
    s = _spec(trend_rate=0.5, switch=Switch("trend", 23, -0.5))
    assert int(np.argmax(render_series(s, 0))) == 23


def test_noise_free_reproducible():
    s = dataclasses.replace(sample_spec(5), noise_level="none")
    s = dataclasses.replace(s, switch=None)
    np.testing.assert_array_equal(render_series(s, 1), render_series(s, 2))
    np.testing.assert_array_equal(render_series(s, 1), deterministic_series(s))


@pytest.mark.parametrize("level,var", [("low", 0.01), ("medium", 0.1), ("high", 0.5)])
def test_noise_variance(level, var):
    resid = []
    for i in range(1000):
        s = dataclasses.replace(sample_spec(i), noise_level=level, combination="additive", switch=None)
        resid.append(render_series(s, (i, 1)) - deterministic_series(s))
    assert abs(np.var(np.concatenate(resid)) / var - 1.0) < 0.2


def test_multiplicative_shift_recorded():
    s = _spec(combination="multiplicative", trend_level=-2.0, trend_rate=0.1, amplitude=1.0)
    from dualcast.synth import with_positive_trend

    t = with_positive_trend(s)
    assert t.trend_offset > 0
    assert np.all(deterministic_series(s) > 0)


def test_season_shapes_within_amplitude():
    for kind in SEASON_KINDS:
        x = render_series(_spec(season_kind=kind, amplitude=1.3), 0)
        assert np.max(np.abs(x)) <= 1.3 + 1e-12


def test_period_switch_changes_period():
    s = _spec(lookback=200, horizon=100, amplitude=1.0, period=10, switch=Switch("seasonality", 150, 25.0))
    x = render_series(s, 0)
    for seg, p in ((x[:150], 10), (x[150:], 25)):
        seg = seg - seg.mean()
        ac = [np.dot(seg[:-lag], seg[lag:]) / (len(seg) - lag) for lag in range(1, 40)]
        assert int(np.argmax(ac)) + 1 == p


def test_caption_upward_slot():
    s = _spec(trend_rate=0.2)
    hist, _ = render_captions(s, rng_seed=3)
    assert any(w in hist for w in SLOT_WORDS["direction"]["up"])


def test_caption_switch_placement():
    s = _spec(trend_rate=0.2, switch=Switch("trend", 44, -0.2))
    hist, fut = render_captions(s, rng_seed=0)
    assert any(w in fut for w in SWITCH_WORDS) and not any(w in hist for w in SWITCH_WORDS)
    assert "after about 4 steps" in fut
    s = _spec(trend_rate=0.2, switch=Switch("trend", 30, -0.2))
    hist, fut = render_captions(s, rng_seed=0)
    assert any(w in hist for w in SWITCH_WORDS) and not any(w in fut for w in SWITCH_WORDS)
    assert any(w in fut for w in SLOT_WORDS["direction"]["down"])


def test_caption_deterministic():
    s = sample_spec(11)
    assert render_captions(s, rng_seed=5) == render_captions(s, rng_seed=5)


def test_uncovered_pair_names_it():
    bank = CaptionTemplateBank()
    del bank.templates[("seasonality", "m_shape")]
    with pytest.raises(KeyError, match="m_shape"):
        render_captions(_spec(season_kind="m_shape"), bank)


def test_bank_requires_two_variants():
    with pytest.raises(ValueError):
        CaptionTemplateBank(templates={("trend", "linear"): ("only one",)})


def test_bank_covers_every_reachable_pair():
    bank = CaptionTemplateBank()
    for i in range(500):
        render_captions(sample_spec(i), bank, i)
    assert all(len(v) >= 2 for v in bank.templates.values())
    assert all(len(v) >= 2 for slot in bank.slots.values() for v in slot.values())


def test_reverse_parse_recovers_fields():
    for i in range(200):
        s = sample_spec((3, i))
        hist, fut = render_captions(s, rng_seed=(3, i, 2))
        got = parse_caption(hist, fut)
        assert got == {
            "trend_direction": s.trend_direction,
            "noise_level": s.noise_level,
            "has_switch": s.switch is not None,
        }, (hist, fut)


def test_build_dataset_default_size():
    windows, specs = build_dataset(3040)
    assert len(windows) == 3040
    assert {(w.lookback, w.horizon) for w in windows} == {(200, 30)}
    assert len({w.series_id for w in windows}) == 3040


def test_write_dataset_single_and_deterministic(tmp_path):
    p1, m1 = write_dataset(tmp_path / "a.jsonl", 1, seed=3)
    windows, manifest = load_dataset(p1)
    assert len(windows) == 1 and manifest.captioned and manifest.spec == WindowingSpec(200, 30, 230)
    p2, _ = write_dataset(tmp_path / "b.jsonl", 1, seed=3)
    assert p1.read_bytes() == p2.read_bytes()


def test_families_valid():
    for name in FAMILIES:
        dist = family_distribution(name, 96, 24)
        windows, _ = build_dataset(5, dist, seed=1)
        assert windows[0].lookback == 96


def test_switch_trend_family_horizon_share():
    dist = family_distribution("switch_trend", 96, 24)
    specs = [sample_spec((1, i), dist) for i in range(2000)]
    share = np.mean([s.switch is not None and s.switch.index >= 96 for s in specs])
    assert share >= 0.4


def test_distribution_rejects_bad_values():
    with pytest.raises(ValueError):
        SpecDistribution(trend_kinds=("cubic",))
    with pytest.raises(ValueError):
        SpecDistribution(exp_rate_range=(0.5, 3.0))
