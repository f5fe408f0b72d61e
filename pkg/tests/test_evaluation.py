import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reroute.errors import ClassTooSmall, LengthMismatch, OutOfRange
from reroute.evaluation import (
    EvaluationSeries,
    Metrics,
    accuracy,
    cross_validate_and_select,
    pick_winner,
    reroute_coverage,
    reroute_detection_score,
    stratified_kfold,
)
from reroute.features import FeatureSchema, MergedDataset
from reroute.models import LearnerSpec
from reroute.resample import ResampleConfig


def brute_accuracy(t, p):
    return sum(1 for a, b in zip(t, p) if a == b) / len(t)


def brute_coverage(t, p):
    runs, i = [], 0
    while i < len(t):
        if t[i] == 1:
            j = i
            while j < len(t) and t[j] == 1:
                j += 1
            runs.append(range(i, j))
            i = j
        else:
            i += 1
    if not runs:
        return 1.0
    return sum(1 for r in runs if any(p[x] == 1 for x in r)) / len(runs)


series = st.integers(1, 100).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n)))


# --- metrics ---------------------------------------------------------------

def test_accuracy_examples():
    assert accuracy([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0
    assert accuracy([0, 1, 1, 0], [1, 0, 0, 1]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75
    with pytest.raises(LengthMismatch):
        accuracy([0, 1], [0])
    with pytest.raises(LengthMismatch):
        accuracy([], [])


def test_coverage_examples():
    assert reroute_coverage([0, 1, 1, 0, 1], [0, 0, 1, 0, 0]) == 0.5
    assert reroute_coverage([0, 1, 1, 0, 1, 1], [0, 1, 0, 0, 0, 1]) == 1.0
    assert reroute_coverage([0, 0, 0], [1, 0, 1]) == 1.0
    with pytest.raises(LengthMismatch):
        reroute_coverage([1], [1, 0])


def test_score_examples():
    assert reroute_detection_score(0.9, 1.0) == 0.95
    assert reroute_detection_score(1.0, 1.0) == 1.0
    assert reroute_detection_score(0.8, 0.5) == 0.65
    with pytest.raises(OutOfRange):
        reroute_detection_score(1.2, 0.5)
    with pytest.raises(OutOfRange):
        reroute_detection_score(0.5, -0.1)


def test_score_is_mean_on_random_pairs():
    rng = np.random.default_rng(0)
    for a, c in rng.random((1000, 2)):
        assert reroute_detection_score(float(a), float(c)) == (float(a) + float(c)) / 2


@settings(max_examples=1000, deadline=None)
@given(series)
def test_metrics_match_brute_force(tp):
    t, p = tp
    acc, cov = accuracy(t, p), reroute_coverage(t, p)
    assert acc == brute_accuracy(t, p)
    assert cov == brute_coverage(t, p)
    assert 0 <= acc <= 1 and 0 <= cov <= 1
    m = EvaluationSeries(np.array(t), np.array(p)).metrics()
    assert m.reroute_detection_score == (acc + cov) / 2


@settings(max_examples=300, deadline=None)
@given(series, st.integers(0, 99), st.integers(1, 5))
def test_widening_covered_prediction_keeps_coverage(tp, at, width):
    t, p = tp
    t, p = np.array(t), np.array(p)
    hits = np.flatnonzero((t == 1) & (p == 1))
    if not hits.size:
        return
    start = hits[at % hits.size]
    lo, hi = start, start
    while lo > 0 and p[lo - 1] == 1:
        lo -= 1
    while hi + 1 < len(p) and p[hi + 1] == 1:
        hi += 1
    wide = p.copy()
    wide[max(lo - width, 0):hi + width + 1] = 1
    assert reroute_coverage(t, wide) >= reroute_coverage(t, p)


def test_per_minute_mode_repeats_buckets():
    s = EvaluationSeries(np.array([0, 1, 1]), np.array([0, 1, 0]),
                         np.array(["2020-01-01T00:00", "2020-01-01T00:15", "2020-01-01T00:30"], dtype="datetime64[m]"))
    m = s.per_minute(15)
    assert len(m.y_true) == 45 and m.timestamps[16] == np.datetime64("2020-01-01T00:16")
    assert m.metrics().accuracy == s.metrics().accuracy


# --- folds -----------------------------------------------------------------

def test_fold_sizes():
    folds = stratified_kfold(10, [0, 1] * 5, 5, seed=0)
    assert [len(f) for f in folds] == [2] * 5


def test_stratification_example():
    labels = np.array([1] * 20 + [0] * 80)
    folds = stratified_kfold(100, labels, 5, seed=3)
    assert [int(labels[f].sum()) for f in folds] == [4] * 5


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.lists(st.integers(0, 1), min_size=14, max_size=120), st.integers(0, 2**32 - 1))
def test_fold_partition(k, labels, seed):
    labels = np.array(labels)
    if min((labels == 0).sum(), (labels == 1).sum()) < k:
        with pytest.raises(ClassTooSmall):
            stratified_kfold(len(labels), labels, k, seed)
        return
    folds = stratified_kfold(len(labels), labels, k, seed)
    joined = np.concatenate(folds)
    assert sorted(joined.tolist()) == list(range(len(labels)))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for cls in (0, 1):
        per = [int((labels[f] == cls).sum()) for f in folds]
        assert max(per) - min(per) <= 1
    again = stratified_kfold(len(labels), labels, k, seed)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


def test_class_too_small():
    with pytest.raises(ClassTooSmall):
        stratified_kfold(6, [0, 0, 0, 0, 1, 1], 3)
    with pytest.raises(ClassTooSmall):
        stratified_kfold(6, [0] * 6, 2)


# --- selection -------------------------------------------------------------

def test_tie_break():
    same = Metrics.from_parts(0.75, 0.75)
    assert pick_winner({"b-learner": same, "a-learner": same})[0] == "a-learner"
    hi_acc = Metrics.from_parts(1.0, 0.5)
    winner, trail = pick_winner({"a": same, "b": hi_acc})
    assert winner == "b" and any("accuracy" in line for line in trail)
    assert pick_winner({"x": Metrics.from_parts(0.5, 0.5), "y": Metrics.from_parts(0.6, 0.6)})[0] == "y"


def separable(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 4))
    y = (X[:, 0] > 0.75).astype(np.uint8)
    ts = np.datetime64("2020-01-01T00:00") + np.arange(n) * np.timedelta64(15, "m")
    return MergedDataset(FeatureSchema(tuple(f"f{i}" for i in range(4))), X, y, ts)


def test_single_learner_wins_and_report_serializes(tmp_path):
    ds = separable()
    spec = LearnerSpec.from_config({"preset": "rf-paper", "n_estimators": 5})
    report, model = cross_validate_and_select(ds, [spec], ResampleConfig(), k=3, seed=1)
    assert report.winner == "rf-paper" and model.learner_id == "rf-paper"
    assert len(report.folds["rf-paper"]) == 3
    report.save(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["winner"] == "rf-paper" and data["evaluation_mode"] == "bucket"
    assert "rf-paper" in report.table()


def test_identical_learners_tie_on_id():
    ds = separable(seed=2)
    specs = [LearnerSpec.from_config({"preset": "rf-paper", "n_estimators": 4, "id": name}) for name in ("zeta", "alpha")]
    report, _ = cross_validate_and_select(ds, specs, ResampleConfig(), k=3)
    assert report.mean["zeta"] == report.mean["alpha"]
    assert report.winner == "alpha"


def test_test_rows_never_reach_training():
    ds = separable(seed=4)
    seen = []

    def hook(fold, train, test_idx):
        seen.append(fold)
        test_rows = {tuple(r) for r in ds.rows[test_idx].tolist()}
        assert not set(train.source_index[train.source_index >= 0].tolist()) & set(test_idx.tolist())
        assert not set(train.parents[train.parents >= 0].tolist()) & set(test_idx.tolist())
        # no training row, original or synthetic, equals a test-fold row
        assert not {tuple(r) for r in train.rows.tolist()} & test_rows

    report, _ = cross_validate_and_select(ds, [LearnerSpec.from_config("knn")], ResampleConfig(), k=4,
                                          seed=5, on_fold=hook)
    assert seen == [0, 1, 2, 3]
    assert len({a["test_rows"] for a in report.fold_audit}) == 4


def test_minute_mode_recorded():
    report, _ = cross_validate_and_select(separable(), [LearnerSpec.from_config("knn")], ResampleConfig(),
                                          k=3, evaluation_mode="minute")
    assert report.evaluation_mode == "minute"
    with pytest.raises(ValueError):
        cross_validate_and_select(separable(), [], ResampleConfig())
