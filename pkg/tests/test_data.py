import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ticd.data import (RegimeDataset, SegmentationConfig, detect_events, load_manifest, normalize, save_manifest,
                       segment_anomalies, window)
from ticd.exceptions import DataError


def test_window_layout():
    Y = np.arange(12.0).reshape(6, 2)
    X = window(Y, 2)
    assert X.shape == (4, 6)
    # row for t = 2: [Y_2 | Y_1 | Y_0]
    np.testing.assert_array_equal(X[0], [4, 5, 2, 3, 0, 1])
    np.testing.assert_array_equal(X[-1], [10, 11, 8, 9, 6, 7])
    with pytest.raises(ValueError):
        window(Y, 6)


@given(st.integers(0, 3), st.integers(1, 4), st.integers(5, 30))
@settings(max_examples=40, deadline=None)
def test_window_blocks_are_shifted_copies(p, d, T):
    Y = np.random.default_rng(T).normal(size=(T, d))
    X = window(Y, p)
    assert X.shape == (T - p, (p + 1) * d)
    for k in range(p + 1):
        np.testing.assert_array_equal(X[:, k * d:(k + 1) * d], Y[p - k:T - k])


def test_dataset_validation():
    with pytest.raises(DataError):
        RegimeDataset(2, 1, ["a"], [[np.zeros((5, 2))]])
    with pytest.raises(DataError):
        RegimeDataset(2, 1, ["a", "b"], [[np.zeros((1, 2))]])
    with pytest.raises(DataError):
        RegimeDataset(2, 1, ["a", "b"], [[np.zeros((5, 3))]])
    with pytest.raises(DataError):
        RegimeDataset(2, 1, ["a", "b"], [[np.zeros((5, 2))]], observational=[False])
    with pytest.raises(DataError):
        RegimeDataset(2, 1, ["a", "b"], [])


def test_segments_do_not_window_across_boundaries():
    a = np.arange(10.0).reshape(5, 2)
    b = 100 + np.arange(6.0).reshape(3, 2)
    ds = RegimeDataset(2, 1, ["u", "v"], [[a, b]])
    X = ds.regimes[0]
    assert X.shape == (4 + 2, 4)
    # no window mixes rows of the two segments
    assert not np.any((X[:, :2] >= 100) & (X[:, 2:] < 100))


def test_stacked_labels():
    ds = RegimeDataset.from_series([np.zeros((4, 1)), np.ones((6, 1))], p=1)
    X, y = ds.stacked()
    assert X.shape == (8, 2)
    np.testing.assert_array_equal(y, [0] * 3 + [1] * 5)
    assert ds.observational_only().Q == 1


def test_normalize_pooled():
    rng = np.random.default_rng(0)
    ds = RegimeDataset.from_series([rng.normal(3, 2, (400, 2)), rng.normal(-1, 5, (300, 2))], p=1)
    nd, stats = normalize(ds)
    cur = np.vstack(nd.regimes)[:, :2]
    np.testing.assert_allclose(cur.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(cur.std(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(stats.invert(nd.segments[1][0]), ds.segments[1][0])
    _, per = normalize(ds, pooled=False)
    assert len(per) == 2


def test_normalize_rejects_constant_variable():
    ds = RegimeDataset.from_series([np.c_[np.ones(10), np.arange(10.0)]], p=1)
    with pytest.raises(DataError, match="zero variance"):
        normalize(ds)


@given(st.lists(st.integers(3, 20), min_size=1, max_size=4), st.integers(1, 3), st.integers(0, 2))
@settings(max_examples=25, deadline=None)
def test_manifest_round_trip_is_exact(tmp_path_factory, lengths, d, p):
    rng = np.random.default_rng(sum(lengths) + d)
    segs = [[rng.normal(size=(L + p, d)) * 10.0 ** rng.integers(-8, 8)] for L in lengths]
    if len(segs) > 1:
        segs[1].append(rng.normal(size=(p + 2, d)))
    ds = RegimeDataset(d, p, [f"v{j}" for j in range(d)], segs)
    root = tmp_path_factory.mktemp("m")
    save_manifest(ds, root)
    assert load_manifest(root) == ds


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_manifest(tmp_path / "missing.json")
    ds = RegimeDataset.from_series([np.ones((3, 2)) * [1, 2]], p=1)
    m = save_manifest(ds, tmp_path)
    doc = json.loads(m.read_text())
    doc["schema"] = 99
    m.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="schema"):
        load_manifest(m)
    doc["schema"] = 1
    m.write_text(json.dumps(doc))
    (tmp_path / "regime_0.csv").write_text("x1,x2\n1.0,oops\n")
    with pytest.raises(DataError, match="row 2"):
        load_manifest(m)
    (tmp_path / "regime_0.csv").write_text("a,b\n1.0,2.0\n")
    with pytest.raises(DataError, match="header"):
        load_manifest(m)


def spiky_series(rng, T=3000, d=3, onsets=(400, 900, 1500, 2100, 2600), sigma=10.0):
    Y = rng.normal(size=(T, d))
    for i, t in enumerate(onsets):
        Y[t, i % d] += sigma * Y[:, i % d].std()
    return Y


def test_detect_events_at_onsets():
    rng = np.random.default_rng(0)
    onsets = (400, 900, 1500, 2100, 2600)
    Y = spiky_series(rng, onsets=onsets)
    cfg = SegmentationConfig(n_sigma=6.0, window_len=120)
    assert detect_events(Y, cfg) == [(t, t + 120) for t in onsets]


def test_segment_anomalies_regimes():
    rng = np.random.default_rng(1)
    onsets = (400, 900, 1500, 2100, 2600)
    Y = spiky_series(rng, onsets=onsets)
    ds = segment_anomalies(Y, SegmentationConfig(n_sigma=6.0, window_len=100), p=1)
    assert ds.Q == 6
    assert ds.observational == [True] + [False] * 5
    for q, t in enumerate(onsets, start=1):
        np.testing.assert_array_equal(ds.segments[q][0], Y[t:t + 100])
    assert sum(len(s) for s in ds.segments[0]) == 3000 - 500
    merged = segment_anomalies(Y, SegmentationConfig(n_sigma=6.0, window_len=100, merge_events=True), p=1)
    assert merged.Q == 2 and len(merged.segments[1]) == 5


def test_events_inside_open_window_are_absorbed():
    Y = np.zeros((500, 1))
    Y[::7] = 0.1
    Y[100] = Y[150] = 50.0
    ev = detect_events(Y, SegmentationConfig(n_sigma=5.0, window_len=120))
    assert ev == [(100, 220)]


def test_event_window_truncated_at_end():
    Y = np.random.default_rng(2).normal(size=(300, 2))
    Y[280, 0] = 100.0
    assert detect_events(Y, SegmentationConfig(n_sigma=8.0, window_len=120)) == [(280, 300)]


def test_reference_span():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(600, 1))
    Y[300:] *= 50  # a level shift outside the reference span is flagged
    ev = detect_events(Y, SegmentationConfig(n_sigma=5.0, window_len=50, reference=(0, 300)))
    assert ev and ev[0][0] >= 300


def test_segmentation_config_validation():
    Y = np.random.default_rng(0).normal(size=(100, 2))
    with pytest.raises(DataError):
        segment_anomalies(Y, SegmentationConfig(n_sigma=0), p=1)
    with pytest.raises(DataError):
        segment_anomalies(Y, SegmentationConfig(window_len=1), p=2)


@given(arrays(np.float64, (40, 2), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=30, deadline=None)
def test_segmentation_partitions_rows(Y):
    cfg = SegmentationConfig(n_sigma=2.0, window_len=5)
    try:
        ds = segment_anomalies(Y, cfg, p=0)
    except DataError:
        return
    # with p = 0 every row lands in exactly one regime
    rows = np.vstack([s for regime in ds.segments for s in regime])
    assert len(rows) == len(Y)
    assert sorted(map(tuple, rows)) == sorted(map(tuple, Y))
