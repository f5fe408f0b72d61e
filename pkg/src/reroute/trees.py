"""Tree ensembles: random forest, extremely randomized trees and bagging.

Extra-trees are grown with scikit-learn's CART builder (``splitter="random"``).
Random forest and bagging trees on large inputs split their upper nodes here,
on columns sorted once per forest, and hand small subtrees to scikit-learn's
best splitter. Every tree is copied into flat arrays, so prediction,
serialization and seeding are handled here. Tree
``i`` of a forest is seeded with ``seed + i`` which makes parallel and
sequential fits identical.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from joblib import Parallel, delayed
from numba import njit
from sklearn.tree import DecisionTreeClassifier

from .errors import EmptyDataset, SingleClass

_MODES = ("random_forest", "extra_trees", "bagging")


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_features: str = "sqrt"
    criterion: str = "gini"
    mode: str = "random_forest"
    bootstrap: bool | None = None  # None: on for random_forest/bagging, off for extra_trees
    seed: int = 0
    max_depth: int | None = None
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if self.max_features not in ("log2", "sqrt", "all"):
            raise ValueError("max_features must be log2, sqrt or all")
        if self.criterion not in ("entropy", "gini"):
            raise ValueError("criterion must be entropy or gini")
        if self.n_estimators < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators and min_samples_leaf must be positive")
        if self.mode == "bagging" and self.max_features != "all":
            object.__setattr__(self, "max_features", "all")
        if self.bootstrap is None:
            object.__setattr__(self, "bootstrap", self.mode != "extra_trees")

    def to_dict(self) -> dict:
        return asdict(self)

    def n_split_features(self, n_features: int) -> int:
        if self.max_features == "log2":
            return max(1, int(math.log2(n_features)))
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        return n_features


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf.

    ``value`` is the class-1 fraction of the training rows reaching a node.
    Rows go left when ``x[feature] <= threshold`` after a cast to float32.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X32 = np.asarray(X, dtype=np.float32)
        node = np.zeros(len(X32), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            f = self.feature[cur]
            go_left = X32[active, f] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
        )

    @classmethod
    def leaf(cls, fraction: float, n: int) -> "Tree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([float(fraction)]), np.array([n]))


# Nodes with at least this many rows are split on columns sorted once per
# forest. Smaller subtrees go to scikit-learn, which re-sorts at every node
# but has no per-node Python overhead.
PRESORT_MIN_ROWS = 512


def _sklearn_tree(X: np.ndarray, y: np.ndarray, weight: np.ndarray | None, config: ForestConfig,
                  max_depth: int | None, seed: int) -> Tree:
    total = len(y) if weight is None else int(weight.sum())
    n1 = int(y.sum() if weight is None else weight[y == 1].sum())
    if n1 == 0 or n1 == total or max_depth == 0:
        return Tree.leaf(n1 / total, total)
    clf = DecisionTreeClassifier(
        criterion=config.criterion,
        splitter="random" if config.mode == "extra_trees" else "best",
        max_features=config.n_split_features(X.shape[1]),
        max_depth=max_depth,
        min_samples_leaf=config.min_samples_leaf,
        # split only on strictly positive impurity decrease
        min_impurity_decrease=1e-12,
        random_state=seed,
    )
    clf.fit(X, y, sample_weight=weight)
    t = clf.tree_
    counts = t.value[:, 0, :]
    class1 = list(clf.classes_).index(1)
    value = counts[:, class1] / counts.sum(axis=1)
    feature = np.where(t.children_left >= 0, t.feature, -1).astype(np.int64)
    return Tree(
        feature=feature,
        threshold=np.where(feature >= 0, t.threshold, 0.0).astype(np.float64),
        left=t.children_left.astype(np.int64),
        right=t.children_right.astype(np.int64),
        value=value.astype(np.float64),
        n_samples=np.rint(t.weighted_n_node_samples).astype(np.int64),
    )


@njit(cache=True, nogil=True)
def _impurity(p: float, entropy: bool) -> float:
    """Impurity per unit weight of a node whose class-1 fraction is ``p``."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    if entropy:
        return -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


@njit(cache=True, nogil=True)
def _scan_feature(order: np.ndarray, in_node: np.ndarray, x: np.ndarray, w: np.ndarray, y1: np.ndarray,
                  total: float, total1: float, parent: float, entropy: bool) -> tuple[bool, float, float]:
    """Best threshold on one presorted column, restricted to ``in_node`` rows.

    Returns ``(constant, gain, threshold)``; the lowest threshold wins ties.
    """
    best, threshold = -np.inf, 0.0
    nl, n1l, prev = 0.0, 0.0, 0.0
    seen, constant = False, True
    for r in order:
        if not in_node[r]:
            continue
        v = np.float64(x[r])
        if seen and v != prev:
            constant = False
            nr, n1r = total - nl, total1 - n1l
            gain = parent - (nl * _impurity(n1l / nl, entropy) + nr * _impurity(n1r / nr, entropy)) / total
            if gain > best:
                best, threshold = gain, (prev + v) / 2.0
        nl += w[r]
        n1l += y1[r]
        prev, seen = v, True
    return constant, best, threshold


@dataclass(frozen=True)
class _Presorted:
    """Column-major copy of the training rows and each column's sort order."""

    X: np.ndarray
    XT: np.ndarray
    order: np.ndarray

    @classmethod
    def build(cls, X: np.ndarray) -> "_Presorted":
        return cls(X, np.ascontiguousarray(X.T), np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T))


def _best_split(pre: _Presorted, y1: np.ndarray, w: np.ndarray, rows: np.ndarray, features: np.ndarray,
                k: int, criterion: str) -> tuple[float, int, float]:
    """Exhaustive best split over the first ``k`` non-constant ``features``.

    Returns ``(gain, feature, threshold)``; ties keep the earlier feature and
    the lower threshold.
    """
    in_node = np.zeros(len(pre.X), dtype=np.bool_)
    in_node[rows] = True
    W, W1 = float(w[rows].sum()), float(y1[rows].sum())
    entropy = criterion == "entropy"
    parent = _impurity(W1 / W, entropy)
    best = (-np.inf, -1, 0.0)
    visited = 0
    for f in features:
        if visited == k:
            break
        constant, gain, t = _scan_feature(pre.order[f], in_node, pre.XT[f], w, y1, W, W1, parent, entropy)
        if constant:
            continue  # constant features do not count towards k
        visited += 1
        if gain > best[0]:
            best = (gain, int(f), t)
    return best


def _grow_presorted(pre: _Presorted, y: np.ndarray, weight: np.ndarray, config: ForestConfig,
                    rng: np.random.Generator) -> Tree:
    """Best-split CART: large nodes here, small subtrees through scikit-learn."""
    n_features = pre.X.shape[1]
    k = config.n_split_features(n_features)
    y1 = weight * y
    feature, threshold, left, right, value, count = [], [], [], [], [], []
    stack = [(np.flatnonzero(weight > 0), 0, -1, True)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        W, W1 = weight[rows].sum(), y1[rows].sum()
        remaining = None if config.max_depth is None else config.max_depth - depth
        if len(rows) < PRESORT_MIN_ROWS:
            sub = _sklearn_tree(pre.X[rows], y[rows], weight[rows], config, remaining,
                                int(rng.integers(2**31)))
            feature.extend(sub.feature.tolist())
            threshold.extend(sub.threshold.tolist())
            left.extend(np.where(sub.left >= 0, sub.left + node, -1).tolist())
            right.extend(np.where(sub.right >= 0, sub.right + node, -1).tolist())
            value.extend(sub.value.tolist())
            count.extend(sub.n_samples.tolist())
            continue
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(W1 / W))
        count.append(int(round(W)))
        if W1 == 0 or W1 == W or remaining == 0:
            continue
        # with every feature in play, visit them in index order so ties keep the lower one
        features = np.arange(n_features) if k == n_features else rng.permutation(n_features)
        gain, f, t = _best_split(pre, y1, weight, rows, features, k, config.criterion)
        if gain <= 1e-12:
            continue
        feature[node], threshold[node] = f, t
        goes_left = pre.X[rows, f] <= t
        # right first so the left subtree is numbered next
        stack.append((rows[~goes_left], depth + 1, node, False))
        stack.append((rows[goes_left], depth + 1, node, True))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64), np.array(count, dtype=np.int64))


def _uses_presort(config: ForestConfig, n_rows: int) -> bool:
    return config.mode != "extra_trees" and config.min_samples_leaf == 1 and n_rows >= PRESORT_MIN_ROWS


def _grow_tree(X: np.ndarray, y: np.ndarray, config: ForestConfig, index: int,
               pre: _Presorted | None = None) -> Tree:
    tree_seed = (config.seed + index) % 2**32
    rng = np.random.default_rng(tree_seed)
    if pre is not None:
        weight = (np.bincount(rng.integers(0, len(X), size=len(X)), minlength=len(X)) if config.bootstrap
                  else np.ones(len(X), dtype=np.int64)).astype(np.float64)
        return _grow_presorted(pre, y, weight, config, rng)
    weight = None
    if config.bootstrap:
        rows = rng.integers(0, len(X), size=len(X))
        if config.min_samples_leaf == 1:
            # multiplicities as weights grow the same tree on fewer rows
            counts = np.bincount(rows, minlength=len(X))
            rows = np.flatnonzero(counts)
            weight = counts[rows].astype(np.float64)
        X, y = X[rows], y[rows]
    return _sklearn_tree(X, y, weight, config, config.max_depth, tree_seed)


@dataclass
class Forest:
    config: ForestConfig
    n_features: int
    trees: list[Tree]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.mean(np.stack([t.predict_proba(X) for t in self.trees]), axis=0)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(ForestConfig(**d["config"]), int(d["n_features"]),
                   [Tree.from_dict(t) for t in d["trees"]])


def fit_forest_arrays(X: np.ndarray, y: np.ndarray, config: ForestConfig, n_jobs: int = 1) -> Forest:
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise EmptyDataset("cannot fit a forest on zero rows")
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels hold a single class")
    pre = _Presorted.build(X) if _uses_presort(config, len(X)) else None
    if n_jobs == 1:
        trees = [_grow_tree(X, y, config, i, pre) for i in range(config.n_estimators)]
    else:
        trees = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_grow_tree)(X, y, config, i, pre) for i in range(config.n_estimators)
        )
    return Forest(config, X.shape[1], list(trees))
