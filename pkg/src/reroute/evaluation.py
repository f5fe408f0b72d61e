"""Reroute Detection Score, cross-validation and learner selection."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ClassTooSmall, LengthMismatch, OutOfRange
from .features import MergedDataset
from .models import LearnerSpec, TrainedModel, apply_threshold, fit_learner, predict_proba
from .resample import ResampleConfig, ResampleReport, smote_tomek

logger = logging.getLogger(__name__)


def _pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(y_true).astype(np.int8).ravel()
    p = np.asarray(y_pred).astype(np.int8).ravel()
    if len(t) != len(p):
        raise LengthMismatch(f"y_true has {len(t)} entries, y_pred {len(p)}")
    if len(t) == 0:
        raise LengthMismatch("empty series")
    return t, p


def accuracy(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    return float(np.count_nonzero(t == p) / len(t))


def reroute_coverage(y_true, y_pred) -> float:
    """Share of maximal runs of ``y_true == 1`` hit by at least one predicted 1.

    With no positive run the coverage is 1.0.
    """
    t, p = _pair(y_true, y_pred)
    starts = (t == 1) & np.concatenate([[True], t[:-1] == 0])
    n_runs = int(starts.sum())
    if n_runs == 0:
        return 1.0
    run_id = np.cumsum(starts) - 1
    hit = (t == 1) & (p == 1)
    covered = np.unique(run_id[hit]).size
    return covered / n_runs


def reroute_detection_score(acc: float, coverage: float) -> float:
    for name, v in (("accuracy", acc), ("coverage", coverage)):
        if not 0.0 <= v <= 1.0:
            raise OutOfRange(f"{name}={v} outside [0, 1]")
    return (acc + coverage) / 2


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    reroute_coverage: float
    reroute_detection_score: float

    @classmethod
    def from_parts(cls, acc: float, cov: float) -> "Metrics":
        return cls(acc, cov, reroute_detection_score(acc, cov))

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "reroute_coverage": self.reroute_coverage,
                "reroute_detection_score": self.reroute_detection_score}


@dataclass(frozen=True)
class EvaluationSeries:
    y_true: np.ndarray
    y_pred: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        _pair(self.y_true, self.y_pred)

    def metrics(self) -> Metrics:
        return Metrics.from_parts(accuracy(self.y_true, self.y_pred),
                                  reroute_coverage(self.y_true, self.y_pred))

    def per_minute(self, bucket_minutes: int) -> "EvaluationSeries":
        """Repeat each bucket value once per minute."""
        ts = None
        if self.timestamps is not None:
            ts = (self.timestamps[:, None] + np.arange(bucket_minutes) * np.timedelta64(1, "m")).ravel()
        return EvaluationSeries(np.repeat(self.y_true, bucket_minutes),
                                np.repeat(self.y_pred, bucket_minutes), ts)


def stratified_kfold(n_rows: int, labels, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """``k`` disjoint, sorted index arrays with per-class counts balanced to within one.

    Each class is shuffled and dealt round-robin; the dealing continues where
    the previous class stopped so total fold sizes also differ by at most one.
    """
    y = np.asarray(labels)
    if len(y) != n_rows:
        raise LengthMismatch(f"{len(y)} labels for {n_rows} rows")
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    # labels are binary, so an absent class is a class that is too small
    for cls in np.union1d(np.unique(y), [0, 1]):
        members = np.flatnonzero(y == cls)
        if len(members) < k:
            raise ClassTooSmall(f"class {cls} has {len(members)} rows, fewer than k={k}")
        for i in rng.permutation(members):
            folds[pos % k].append(int(i))
            pos += 1
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


@dataclass
class SelectionReport:
    learners: list[str]
    folds: dict[str, list[Metrics]]
    mean: dict[str, Metrics]
    winner: str
    tie_break: list[str]
    k: int
    seed: int
    evaluation_mode: str = "bucket"
    fold_audit: list[dict] = field(default_factory=list)
    resample: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "learners": list(self.learners),
            "folds": {lid: [m.to_dict() for m in ms] for lid, ms in self.folds.items()},
            "mean": {lid: m.to_dict() for lid, m in self.mean.items()},
            "winner": self.winner,
            "tie_break": list(self.tie_break),
            "k": self.k,
            "seed": self.seed,
            "evaluation_mode": self.evaluation_mode,
            "fold_audit": self.fold_audit,
            "resample": self.resample,
            "final": self.final,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def table(self) -> str:
        head = f"{'learner':<16}{'accuracy':>10}{'coverage':>10}{'score':>10}"
        lines = [head, "-" * len(head)]
        for lid in self.learners:
            m = self.mean[lid]
            mark = "  *" if lid == self.winner else ""
            lines.append(f"{lid:<16}{m.accuracy:>10.4f}{m.reroute_coverage:>10.4f}"
                         f"{m.reroute_detection_score:>10.4f}{mark}")
        return "\n".join(lines)


def _digest(values) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=np.int64).tobytes()).hexdigest()[:16]


def pick_winner(mean: dict[str, Metrics]) -> tuple[str, list[str]]:
    """Highest mean score, then higher accuracy, then smaller id."""
    ranked = sorted(mean, key=lambda lid: (-mean[lid].reroute_detection_score, -mean[lid].accuracy, lid))
    best = ranked[0]
    trail = [f"score: {best} has the top mean reroute detection score"]
    ties = [lid for lid in ranked if mean[lid].reroute_detection_score == mean[best].reroute_detection_score]
    if len(ties) > 1:
        trail.append(f"score tie among {sorted(ties)}; comparing accuracy")
        acc_ties = [lid for lid in ties if mean[lid].accuracy == mean[best].accuracy]
        if len(acc_ties) > 1:
            trail.append(f"accuracy tie among {sorted(acc_ties)}; smallest id wins")
    return best, trail


def evaluate_model(model: TrainedModel, dataset: MergedDataset, mode: str = "bucket",
                   bucket_minutes: int = 15) -> Metrics:
    """Metrics of ``model`` on ``dataset`` rows taken in time order."""
    order = np.argsort(dataset.timestamps, kind="stable")
    probs = predict_proba(model, dataset.rows[order])
    series = EvaluationSeries(dataset.labels[order], apply_threshold(probs, model.threshold),
                              dataset.timestamps[order])
    if mode == "minute":
        series = series.per_minute(bucket_minutes)
    elif mode != "bucket":
        raise ValueError(f"unknown evaluation mode {mode!r}")
    return series.metrics()


FoldHook = Callable[[int, MergedDataset, np.ndarray], None]


def cross_validate_and_select(
    dataset: MergedDataset,
    learners: Sequence[LearnerSpec],
    resample: ResampleConfig,
    k: int = 5,
    seed: int = 0,
    evaluation_mode: str = "bucket",
    bucket_minutes: int = 15,
    n_jobs: int = 1,
    on_fold: FoldHook | None = None,
) -> tuple[SelectionReport, TrainedModel]:
    """Stratified k-fold competition between ``learners``.

    Only the training part of each fold is resampled. The winner is refit on
    the whole resampled dataset and returned with the report.
    """
    if not learners:
        raise ValueError("need at least one learner")
    ids = [spec.id for spec in learners]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate learner ids in {ids}")
    folds = stratified_kfold(len(dataset), dataset.labels, k, seed)
    per_fold: dict[str, list[Metrics]] = {lid: [] for lid in ids}
    audit, resample_log = [], []
    everything = np.arange(len(dataset))
    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(everything, test_idx, assume_unique=True)
        fold_cfg = ResampleConfig(resample.k_neighbors, resample.target_ratio,
                                  resample.seed + f, resample.tomek_removal)
        train, report = smote_tomek(dataset.subset(train_idx), fold_cfg)
        sources = np.unique(train.source_index[train.source_index >= 0])
        parent_rows = np.unique(train.parents[train.parents >= 0])
        if np.intersect1d(np.union1d(sources, parent_rows), test_idx).size:
            raise RuntimeError(f"fold {f}: test rows leaked into the training set")
        if on_fold is not None:
            on_fold(f, train, test_idx)
        audit.append({"fold": f, "n_test": int(len(test_idx)), "n_train": int(len(train)),
                      "test_rows": _digest(test_idx), "train_sources": _digest(sources)})
        resample_log.append(report.to_dict())
        test = dataset.subset(test_idx)
        for spec in learners:
            model = fit_learner(spec, train, n_jobs=n_jobs)
            per_fold[spec.id].append(evaluate_model(model, test, evaluation_mode, bucket_minutes))
            logger.info("fold %d %s: %s", f, spec.id, per_fold[spec.id][-1])

    mean = {}
    for lid in ids:
        acc = float(np.mean([m.accuracy for m in per_fold[lid]]))
        cov = float(np.mean([m.reroute_coverage for m in per_fold[lid]]))
        mean[lid] = Metrics.from_parts(acc, cov)
    winner, trail = pick_winner(mean)

    full, full_report = smote_tomek(dataset, resample)
    spec = next(s for s in learners if s.id == winner)
    final = fit_learner(spec, full, n_jobs=n_jobs)
    report = SelectionReport(
        learners=ids, folds=per_fold, mean=mean, winner=winner, tie_break=trail, k=k, seed=seed,
        evaluation_mode=evaluation_mode, fold_audit=audit, resample=resample_log,
        final={"learner": winner, "resample": full_report.to_dict(),
               "dataset_fingerprint": dataset.fingerprint()},
    )
    return report, final
