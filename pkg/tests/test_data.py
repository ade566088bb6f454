import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcast.data import (
    STD_FLOOR,
    DatasetError,
    Manifest,
    MultimodalWindow,
    NormalizationStats,
    StudentTParams,
    WindowingSpec,
    denormalize_forecast,
    denormalize_values,
    extract_windows,
    load_dataset,
    normalize_history,
    read_jsonl,
    split_windows,
    write_jsonl,
    write_manifest,
)


def _enumerated_starts(n, L, h, stride):
    return [t for t in range(0, n, stride) if t + L + h <= n]


def test_window_count_example():
    ws = extract_windows(np.arange(200.0), WindowingSpec(100, 30, 70))
    assert len(ws) == 2
    assert ws[0].history[0] == 0.0 and ws[1].history[0] == 70.0
    assert ws[1].future == tuple(np.arange(170.0, 200.0))


def test_window_boundaries():
    assert len(extract_windows(np.zeros(13), WindowingSpec(10, 3))) == 1
    with pytest.warns(UserWarning, match="no windows"):
        assert extract_windows(np.zeros(12), WindowingSpec(10, 3)) == []


def test_window_count_exhaustive():
    for n in range(1, 65):
        for L in range(1, 9):
            for h in range(1, 5):
                for stride in (1, 2, 3, 7):
                    spec = WindowingSpec(L, h, stride)
                    assert spec.count(n) == len(_enumerated_starts(n, L, h, stride))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 64), st.integers(1, 12), st.integers(1, 6), st.integers(1, 9))
def test_window_shapes_property(n, L, h, stride):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ws = extract_windows(np.arange(float(n)), WindowingSpec(L, h, stride))
    for k, w in enumerate(ws):
        assert (w.lookback, w.horizon) == (L, h)
        assert w.history[0] == k * stride
        assert w.future[0] == k * stride + L


def test_caption_callable_applied_per_slice():
    ws = extract_windows(np.arange(10.0), WindowingSpec(4, 2, 4), caption=lambda x: f"n={len(x)}")
    assert ws[0].history_text == "n=4" and ws[0].future_text == "n=2"


def test_extract_rejects_nonfinite():
    with pytest.raises(DatasetError):
        extract_windows([1.0, math.nan, 2.0], WindowingSpec(1, 1))


def test_window_rejects_nonfinite():
    with pytest.raises(DatasetError):
        MultimodalWindow("x", (1.0, math.inf), (0.0,))


def test_normalize_examples():
    z, stats = normalize_history([1.0, 3.0])
    np.testing.assert_allclose(z, [-1.0, 1.0])
    assert (stats.mean, stats.std) == (2.0, 1.0)
    z, stats = normalize_history([5.0, 5.0, 5.0])
    assert np.all(z == 0.0) and stats.std == STD_FLOOR


def test_normalize_rejects_short():
    with pytest.raises(ValueError):
        normalize_history([1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_normalize_properties(values):
    x = np.array(values)
    z, stats = normalize_history(x)
    assert abs(z.mean()) < 1e-9
    if x.std() > 1e-3:
        assert abs(z.std() - 1.0) < 1e-9
    np.testing.assert_allclose(denormalize_values(z, stats), x, atol=1e-9, rtol=0)


@pytest.mark.parametrize("value", [683.1484418512998, -1e6 / 3, 0.1, 7.0])
def test_constant_history_normalizes_to_zero(value):
    z, stats = normalize_history([value] * 3)
    assert np.all(z == 0.0) and stats.mean == value


def test_denormalize_forecast_examples():
    p = denormalize_forecast(StudentTParams(0.0, 1.0, 5.0), NormalizationStats(2.0, 3.0))
    assert (p.location, p.scale, p.dof) == (2.0, 3.0, 5.0)
    q = StudentTParams(np.array([0.3]), np.array([0.7]), np.array([4.0]))
    r = denormalize_forecast(q, NormalizationStats(0.0, 1.0))
    assert (r.location, r.scale, r.dof) == (q.location, q.scale, q.dof)


def test_denormalize_preserves_quantiles():
    rng = np.random.default_rng(1)
    nu, mean, std = 5.0, 2.0, 3.0
    samples = rng.standard_t(nu, 200_000) * 0.8 + 0.1
    params = denormalize_forecast(StudentTParams(0.1, 0.8, nu), NormalizationStats(mean, std))
    direct = samples * std + mean
    via_params = rng.standard_t(nu, 200_000) * params.scale + params.location
    for q in (0.1, 0.5, 0.9):
        assert abs(np.quantile(direct, q) - np.quantile(via_params, q)) < 0.05


def test_normalization_stats_floor():
    with pytest.raises(ValueError):
        NormalizationStats(0.0, 0.0)


def test_jsonl_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert read_jsonl(p) == []


def test_jsonl_roundtrip_one(tmp_path):
    w = MultimodalWindow("a", (0.1, 1e-300, -2.5), (3.0,), "héllo", "")
    p = write_jsonl(tmp_path / "x.jsonl", [w])
    assert read_jsonl(p) == [w]
    assert p.read_bytes().endswith(b"\n") and b"\r" not in p.read_bytes()


def test_jsonl_byte_stable(tmp_path):
    w = [MultimodalWindow(f"s{i}", tuple(np.random.randn(5)), tuple(np.random.randn(2)), "a", "b") for i in range(5)]
    p1 = write_jsonl(tmp_path / "1.jsonl", w)
    p2 = write_jsonl(tmp_path / "2.jsonl", read_jsonl(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_jsonl_malformed_line_named(tmp_path):
    good = json.dumps(MultimodalWindow("a", (1.0,), (2.0,)).to_dict())
    p = tmp_path / "bad.jsonl"
    p.write_text(good + "\n" + good + "\n{not json\n")
    with pytest.raises(DatasetError, match="line 3"):
        read_jsonl(p)


def test_jsonl_wrong_keys(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"series_id": "a", "history": [1], "future": [2], "history_text": ""}) + "\n")
    with pytest.raises(DatasetError, match="line 1"):
        read_jsonl(p)


def test_jsonl_spec_mismatch_names_record(tmp_path):
    p = write_jsonl(tmp_path / "x.jsonl", [MultimodalWindow("rec-7", (1.0, 2.0), (3.0,))])
    with pytest.raises(DatasetError, match="rec-7"):
        read_jsonl(p, WindowingSpec(3, 1))


def test_jsonl_captioned_requires_text(tmp_path):
    p = write_jsonl(tmp_path / "x.jsonl", [MultimodalWindow("a", (1.0,), (3.0,), "t", "")])
    with pytest.raises(DatasetError, match="caption"):
        read_jsonl(p, captioned=True)


def test_manifest_roundtrip(tmp_path):
    p = write_jsonl(tmp_path / "d.jsonl", [MultimodalWindow("a", (1.0, 2.0), (3.0,), "x", "y")])
    m = Manifest(2, 1, 3, "demo", True, 0.25, extra={"note": 1})
    mp = write_manifest(p, m)
    assert mp.name == "d.manifest.json"
    raw = json.loads(mp.read_text())
    assert {"L", "h", "stride", "dataset_name", "captioned"} <= set(raw)
    windows, m2 = load_dataset(p)
    assert m2 == m and len(windows) == 1


def test_split_positional():
    ws = [MultimodalWindow(str(i), (float(i),), (0.0,)) for i in range(10)]
    tr, te = split_windows(ws, 0.2)
    assert [w.series_id for w in te] == ["8", "9"] and len(tr) == 8
    with pytest.raises(ValueError):
        split_windows(ws, 1.0)
