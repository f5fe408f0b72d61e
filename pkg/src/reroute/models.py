"""Fitted classifiers, named presets and the model file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CorruptModel, EmptyDataset, InvalidConfig, KTooLarge, SchemaMismatch, SingleClass, VersionMismatch
from .features import FeatureSchema, MergedDataset, NormalizationStats
from .mlp import MlpConfig, MlpWeights, fit_mlp_arrays
from .resample import knn_table
from .trees import Forest, ForestConfig, fit_forest_arrays

MODEL_FORMAT = "reroute-model"
MODEL_VERSION = 1

FOREST_ALGORITHMS = ("random_forest", "extra_trees", "bagging")

PRESETS: dict[str, dict[str, Any]] = {
    "rf-paper": {"algorithm": "random_forest", "n_estimators": 1000, "max_features": "log2",
                 "criterion": "entropy", "seed": 64, "threshold": 0.5},
    "extra-paper": {"algorithm": "extra_trees", "n_estimators": 1000, "max_features": "sqrt",
                    "criterion": "gini", "seed": 64, "threshold": 0.5},
    "bagging": {"algorithm": "bagging", "n_estimators": 100, "criterion": "gini", "seed": 64},
    "knn": {"algorithm": "knn", "k": 5},
    "mlp-paper": {"algorithm": "mlp", "hidden_nodes": 100, "validation_fraction": 0.10,
                  "learning_rate": 0.001, "seed": 64},
}


@dataclass(frozen=True)
class LearnerSpec:
    """A learner entry of the competition: id, algorithm and its settings."""

    id: str
    algorithm: str
    params: dict = field(default_factory=dict)
    threshold: float = 0.5

    @classmethod
    def from_config(cls, entry: str | dict) -> "LearnerSpec":
        """Resolve ``"rf-paper"`` or ``{"preset": "rf-paper", "n_estimators": 200}``."""
        if isinstance(entry, str):
            entry = {"preset": entry}
        entry = dict(entry)
        preset = entry.pop("preset", None)
        base: dict[str, Any] = {}
        if preset is not None:
            if preset not in PRESETS:
                raise InvalidConfig(f"unknown learner preset {preset!r}")
            base = dict(PRESETS[preset])
        base.update(entry)
        learner_id = base.pop("id", preset)
        algorithm = base.pop("algorithm", None)
        if not learner_id or not algorithm:
            raise InvalidConfig(f"learner entry {entry!r} needs an id and an algorithm")
        threshold = float(base.pop("threshold", 0.5))
        return cls(learner_id, algorithm, base, threshold)

    def to_dict(self) -> dict:
        return {"id": self.id, "algorithm": self.algorithm, "params": dict(self.params),
                "threshold": self.threshold}


@dataclass
class KnnStore:
    k: int
    rows: np.ndarray
    labels: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        nn = knn_table(self.rows, self.k, queries=np.asarray(X, dtype=np.float64), exclude_self=False)
        return self.labels[nn].mean(axis=1)

    def to_dict(self) -> dict:
        return {"k": self.k, "rows": self.rows.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KnnStore":
        return cls(int(d["k"]), np.asarray(d["rows"], dtype=np.float64),
                   np.asarray(d["labels"], dtype=np.float64))


@dataclass
class TrainedModel:
    algorithm: str
    learner_id: str
    fitted: Forest | KnnStore | MlpWeights
    schema: FeatureSchema
    normalization: NormalizationStats | None = None
    threshold: float = 0.5
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        return predict_proba(self, rows)


def _check_fit_input(dataset: MergedDataset) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(dataset.rows, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels hold a single class")
    return X, y


def _metadata(dataset: MergedDataset, config: dict) -> dict:
    return {"config": config, "dataset_fingerprint": dataset.fingerprint(),
            "n_rows": len(dataset), "class_counts": [int((dataset.labels == 0).sum()),
                                                     int((dataset.labels == 1).sum())]}


def fit_forest(dataset: MergedDataset, config: ForestConfig, learner_id: str | None = None,
               threshold: float = 0.5, n_jobs: int = 1) -> TrainedModel:
    if len(dataset) == 0:
        raise EmptyDataset("cannot fit a forest on zero rows")
    forest = fit_forest_arrays(dataset.rows, dataset.labels, config, n_jobs=n_jobs)
    return TrainedModel(config.mode, learner_id or config.mode, forest, dataset.schema,
                        threshold=threshold, metadata=_metadata(dataset, config.to_dict()))


def fit_knn(dataset: MergedDataset, k: int = 5, seed: int = 0, learner_id: str = "knn",
            threshold: float = 0.5) -> TrainedModel:
    # k-NN has no randomness; the seed is recorded for provenance only
    X, y = _check_fit_input(dataset)
    if k < 1 or k > len(X):
        raise KTooLarge(f"k={k} with {len(X)} training rows")
    store = KnnStore(k, X.copy(), y.astype(np.float64))
    return TrainedModel("knn", learner_id, store, dataset.schema, threshold=threshold,
                        metadata=_metadata(dataset, {"k": k, "seed": seed}))


def fit_mlp(dataset: MergedDataset, config: MlpConfig, learner_id: str = "mlp",
            threshold: float = 0.5) -> TrainedModel:
    X, y = _check_fit_input(dataset)
    weights, log = fit_mlp_arrays(X, y, config)
    meta = _metadata(dataset, config.to_dict())
    meta["training"] = log
    return TrainedModel("mlp", learner_id, weights, dataset.schema, threshold=threshold, metadata=meta)


def fit_learner(spec: LearnerSpec, dataset: MergedDataset, seed: int | None = None, n_jobs: int = 1) -> TrainedModel:
    """Fit ``spec`` on ``dataset``; ``seed`` overrides the spec's own seed."""
    params = dict(spec.params)
    if seed is not None and spec.algorithm != "knn":
        params["seed"] = seed
    if spec.algorithm in FOREST_ALGORITHMS:
        config = ForestConfig(mode=spec.algorithm, **params)
        return fit_forest(dataset, config, spec.id, spec.threshold, n_jobs=n_jobs)
    if spec.algorithm == "knn":
        return fit_knn(dataset, int(params.get("k", 5)), int(params.get("seed", seed or 0)),
                       spec.id, spec.threshold)
    if spec.algorithm == "mlp":
        return fit_mlp(dataset, MlpConfig(**params), spec.id, spec.threshold)
    raise InvalidConfig(f"unknown algorithm {spec.algorithm!r}")


def predict_proba(model: TrainedModel, rows: np.ndarray) -> np.ndarray:
    """Class-1 probability per row."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != len(model.schema):
        raise SchemaMismatch(f"rows have {rows.shape[1]} features, model expects {len(model.schema)}")
    return model.fitted.predict_proba(rows)


def apply_threshold(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where ``p >= threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(probs) >= threshold).astype(np.uint8)


# ---------------------------------------------------------------------------
# persistence

def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "algorithm": model.algorithm,
        "learner_id": model.learner_id,
        "threshold": model.threshold,
        "schema": list(model.schema.names),
        "normalization": None if model.normalization is None else model.normalization.to_dict(),
        "metadata": model.metadata,
        "fitted": model.fitted.to_dict(),
    }


def model_from_dict(d: dict) -> TrainedModel:
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise CorruptModel("not a reroute model file")
    if d.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"model version {d.get('version')!r}, expected {MODEL_VERSION}")
    try:
        algorithm = d["algorithm"]
        if algorithm in FOREST_ALGORITHMS:
            fitted = Forest.from_dict(d["fitted"])
        elif algorithm == "knn":
            fitted = KnnStore.from_dict(d["fitted"])
        elif algorithm == "mlp":
            fitted = MlpWeights.from_dict(d["fitted"])
        else:
            raise CorruptModel(f"unknown algorithm {algorithm!r}")
        norm = d.get("normalization")
        return TrainedModel(
            algorithm=algorithm,
            learner_id=d["learner_id"],
            fitted=fitted,
            schema=FeatureSchema(tuple(d["schema"])),
            normalization=None if norm is None else NormalizationStats.from_dict(norm),
            threshold=float(d["threshold"]),
            metadata=d.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(str(exc)) from exc


def save_model(model: TrainedModel, path: str | Path) -> None:
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path: str | Path) -> TrainedModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"{path}: {exc}") from exc
    return model_from_dict(data)
