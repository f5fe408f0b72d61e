"""SMOTE oversampling followed by Tomek-link cleaning."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMinority, NoMajority, TooFewPoints
from .features import MergedDataset

logger = logging.getLogger(__name__)

_CHUNK = 2048


@dataclass(frozen=True)
class ResampleConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0
    # "both" drops both members of a Tomek link, "majority" only the class-0 one
    tomek_removal: str = "both"

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0 < self.target_ratio <= 1:
            raise ValueError("target_ratio must lie in (0, 1]")
        if self.tomek_removal not in ("both", "majority"):
            raise ValueError("tomek_removal must be 'both' or 'majority'")


@dataclass(frozen=True)
class ResampleReport:
    before: tuple[int, int]
    after: tuple[int, int]
    synthetic: int
    removed: int
    links: int

    def to_dict(self) -> dict:
        return {"before": list(self.before), "after": list(self.after),
                "synthetic": self.synthetic, "removed": self.removed, "links": self.links}


def nearest_neighbors(points: np.ndarray, query: int, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest rows to ``points[query]``, excluding itself.

    Euclidean distance; ties go to the lower index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k >= n:
        raise TooFewPoints(f"k={k} needs more than {n} points")
    # squared distance ranks like the distance and avoids sqrt merging near-ties
    d = ((points - points[query]) ** 2).sum(axis=1)
    d[query] = np.inf
    return np.lexsort((np.arange(n), d))[:k]


def knn_table(points: np.ndarray, k: int, queries: np.ndarray | None = None,
              exclude_self: bool = True, query_rows: np.ndarray | None = None) -> np.ndarray:
    """``k`` nearest rows of ``points`` for each query row.

    With ``queries=None`` every row of ``points`` is queried and excluded from
    its own neighbor list; ``query_rows`` does the same for a subset of rows.
    Candidates are screened with the Gram-matrix expansion, keeping everything
    within a rounding-error bound of the k-th screened value, then re-ranked
    on exact squared distances, lower index first on ties.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if query_rows is not None:
        own = np.asarray(query_rows, dtype=np.int64)
        q = points[own]
    elif queries is None:
        own = np.arange(n) if exclude_self else None
        q = points
    else:
        own = None
        q = np.asarray(queries, dtype=np.float64)
    avail = n - 1 if own is not None else n
    if k > avail:
        raise TooFewPoints(f"k={k} needs more than {avail} candidate points")
    # the screen runs in single precision; only the final ranking is exact
    p32 = points.astype(np.float32)
    sq = (points ** 2).sum(axis=1)
    sq32 = sq.astype(np.float32)
    sq_max = float(sq.max()) if n else 0.0
    out = np.empty((len(q), k), dtype=np.int64)
    for lo in range(0, len(q), _CHUNK):
        block = q[lo:lo + _CHUNK]
        b = len(block)
        # |p|^2 - 2 q.p, i.e. squared distance minus the per-row constant |q|^2
        screen = block.astype(np.float32) @ p32.T
        screen *= -2.0
        screen += sq32
        if own is not None:
            screen[np.arange(b), own[lo:lo + b]] = np.inf
        if k == 1:
            kth = screen.min(axis=1)
        else:
            kth = np.partition(screen, k - 1, axis=1)[:, k - 1]
        # generous bound on rounding in the inputs and the expansion
        tol = 1e-5 * ((block ** 2).sum(axis=1) + sq_max) + 1e-30
        r, c = np.nonzero(screen <= (kth + 2 * tol)[:, None])
        exact = ((points[c] - block[r]) ** 2).sum(axis=1)
        order = np.lexsort((c, exact, r))
        r, c = r[order], c[order]
        first = np.searchsorted(r, np.arange(b))
        out[lo:lo + b] = c[first[:, None] + np.arange(k)]
    return out


def interpolate_segment(a: np.ndarray, b: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Rows ``a + lam * (b - a)``, clipped coordinate-wise to the segment box."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1:
        lam = lam[:, None]
    out = a + lam * (b - a)
    np.clip(out, np.minimum(a, b), np.maximum(a, b), out=out)
    return out


def _counts(labels: np.ndarray) -> tuple[int, int]:
    n1 = int(np.count_nonzero(labels == 1))
    return len(labels) - n1, n1


def smote_oversample(dataset: MergedDataset, config: ResampleConfig) -> MergedDataset:
    """Add synthetic class-1 rows on segments between minority neighbors.

    The synthetic count brings minority/majority to ``config.target_ratio``.
    Seeds are spread evenly over minority rows, leftovers drawn without
    replacement; each draw picks one of the ``k`` nearest minority rows and a
    uniform position on the segment. Rows are generated in (minority index,
    draw index) order.
    """
    labels = np.asarray(dataset.labels)
    minority = np.flatnonzero(labels == 1)
    n_maj, n_min = _counts(labels)
    if n_min < 2:
        raise DegenerateMinority(f"{n_min} minority rows; SMOTE needs at least 2")
    if n_maj == 0:
        raise NoMajority("dataset has no class-0 rows")
    n_syn = max(int(round(config.target_ratio * n_maj)) - n_min, 0)
    rng = np.random.default_rng(config.seed)
    if n_syn == 0:
        return MergedDataset(dataset.schema, dataset.rows.copy(), labels.copy(), dataset.timestamps.copy(),
                             synthetic=dataset.synthetic.copy(), source_index=dataset.source_index.copy(),
                             parents=dataset.parents.copy())

    k = min(config.k_neighbors, n_min - 1)
    x_min = dataset.rows[minority]
    nn = knn_table(x_min, k)

    per_seed = np.full(n_min, n_syn // n_min, dtype=np.int64)
    extra = n_syn - per_seed.sum()
    if extra:
        per_seed[rng.choice(n_min, size=extra, replace=False)] += 1
    seeds = np.repeat(np.arange(n_min), per_seed)
    partner = nn[seeds, rng.integers(0, k, size=n_syn)]
    syn = interpolate_segment(x_min[seeds], x_min[partner], rng.random(n_syn))

    rows = np.vstack([dataset.rows, syn])
    new_labels = np.concatenate([labels, np.ones(n_syn, dtype=labels.dtype)])
    ts = np.concatenate([dataset.timestamps, np.full(n_syn, np.datetime64("NaT"), dtype=dataset.timestamps.dtype)])
    synthetic = np.concatenate([dataset.synthetic, np.ones(n_syn, dtype=bool)])
    root = dataset.source_index
    source = np.concatenate([root, np.full(n_syn, -1)])
    parents = np.vstack([dataset.parents, np.column_stack([root[minority[seeds]], root[minority[partner]]])])
    return MergedDataset(dataset.schema, rows, new_labels, ts,
                         synthetic=synthetic, source_index=source, parents=parents)


def find_tomek_links(dataset: MergedDataset) -> list[tuple[int, int]]:
    """Opposite-label pairs that are each other's nearest neighbor."""
    labels = np.asarray(dataset.labels)
    if len(labels) < 2 or len(np.unique(labels)) < 2:
        return []
    rows = np.asarray(dataset.rows, dtype=np.float64)
    n = len(rows)
    # every link has one member in each class, so query the smaller class
    # first and only check the reverse direction for its opposite-label hits
    small = np.flatnonzero(labels == 1)
    if 2 * len(small) > n:
        small = np.flatnonzero(labels != 1)
    nn_small = knn_table(rows, 1, query_rows=small)[:, 0]
    cand = np.flatnonzero(labels[nn_small] != labels[small])
    partners = nn_small[cand]
    uniq, inverse = np.unique(partners, return_inverse=True)
    back = knn_table(rows, 1, query_rows=uniq)[:, 0][inverse]
    hit = back == small[cand]
    pairs = {(int(min(a, b)), int(max(a, b))) for a, b in zip(small[cand][hit], partners[hit])}
    return sorted(pairs)


def _take(dataset: MergedDataset, keep: np.ndarray, base_source: np.ndarray, base_parents: np.ndarray) -> MergedDataset:
    return MergedDataset(dataset.schema, dataset.rows[keep], dataset.labels[keep], dataset.timestamps[keep],
                         synthetic=dataset.synthetic[keep], source_index=base_source[keep],
                         parents=base_parents[keep])


def smote_tomek(dataset: MergedDataset, config: ResampleConfig) -> tuple[MergedDataset, ResampleReport]:
    """SMOTE, then one pass of Tomek-link removal on the augmented rows."""
    before = _counts(dataset.labels)
    augmented = smote_oversample(dataset, config)
    n_syn = int(augmented.synthetic.sum() - dataset.synthetic.sum())
    links = find_tomek_links(augmented)
    drop = set()
    for a, b in links:
        if config.tomek_removal == "both":
            drop.update((a, b))
        else:
            drop.add(a if augmented.labels[a] == 0 else b)
    keep = np.ones(len(augmented), dtype=bool)
    keep[list(drop)] = False
    out = _take(augmented, keep, augmented.source_index, augmented.parents)
    report = ResampleReport(before, _counts(out.labels), n_syn, len(drop), len(links))
    logger.debug("smote_tomek: %s", report)
    return out, report
