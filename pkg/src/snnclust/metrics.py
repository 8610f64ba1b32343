"""Clustering evaluation: ACC, NMI, ARI, silhouette, Calinski-Harabasz, Davies-Bouldin.

Conventions worth knowing:

* NMI is 0 when both partitions have a single cluster (0/0).
* A singleton cluster contributes a silhouette of 0; so does a point with
  a(i) = b(i) = 0.
* Calinski-Harabasz and Davies-Bouldin return ``inf`` when their
  denominator vanishes (zero within-cluster scatter, coincident centroids).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

METRIC_NAMES = ("acc", "nmi", "ari", "sil", "chs", "dbi")
LOWER_IS_BETTER = frozenset({"dbi"})

SILHOUETTE_FULL_LIMIT = 20_000
SILHOUETTE_SAMPLE = 10_000


class UndefinedMetricError(ValueError):
    pass


@dataclass
class ContingencyTable:
    counts: np.ndarray  # (K_true, K_pred)
    true_classes: np.ndarray
    pred_clusters: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(truth, pred) -> ContingencyTable:
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise ValueError(f"label vectors must be 1-D and equal length, got {truth.shape} and {pred.shape}")
    if truth.size == 0:
        raise ValueError("empty label vectors")
    t_classes, t_idx = np.unique(truth, return_inverse=True)
    p_classes, p_idx = np.unique(pred, return_inverse=True)
    kt, kp = len(t_classes), len(p_classes)
    counts = np.bincount(t_idx * kp + p_idx, minlength=kt * kp).reshape(kt, kp).astype(np.int64)
    return ContingencyTable(counts, t_classes, p_classes)


def clustering_accuracy(truth, pred) -> float:
    """Fraction correct under the best one-to-one cluster-to-label mapping."""
    table = contingency(truth, pred)
    counts = table.counts
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:counts.shape[0], :counts.shape[1]] = counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return int(padded[rows, cols].sum()) / table.n


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(truth, pred) -> float:
    """2 I(y, c) / (H(y) + H(c)), natural log."""
    table = contingency(truth, pred)
    n = table.n
    h_true = _entropy(table.row_sums, n)
    h_pred = _entropy(table.col_sums, n)
    if h_true + h_pred == 0.0:
        return 0.0
    nz = table.counts > 0
    joint = table.counts[nz] / n
    outer = np.outer(table.row_sums, table.col_sums)[nz] / (n * n)
    mi = float(np.sum(joint * np.log(joint / outer)))
    return float(min(max(2.0 * mi / (h_true + h_pred), 0.0), 1.0))


def _comb2(x):
    return x * (x - 1) // 2


def ari(truth, pred) -> float:
    """Adjusted Rand index from contingency pair counts, in exact integer arithmetic."""
    table = contingency(truth, pred)
    # int64 holds every per-cell pair count here; products switch to Python ints below
    pairs = int(_comb2(table.counts).sum())
    rows = int(_comb2(table.row_sums).sum())
    cols = int(_comb2(table.col_sums).sum())
    total = _comb2(table.n)
    if total == 0:
        return 1.0
    # (index - expected) / (max - expected), with every term scaled by 2 * total
    num = 2 * (pairs * total - rows * cols)
    den = (rows + cols) * total - 2 * rows * cols
    if den == 0:
        # both partitions trivial (all-one-cluster or all-singletons)
        return 1.0
    return num / den  # int / int is correctly rounded


def _relabel(pred) -> tuple[np.ndarray, int]:
    _, idx = np.unique(np.asarray(pred), return_inverse=True)
    return idx, int(idx.max()) + 1 if idx.size else 0


def silhouette(points, pred, *, sample_size: int | None = None, seed: int = 0,
               chunk: int = 512) -> float:
    """Mean silhouette with Euclidean distance.

    ``sample_size`` evaluates on a uniform subsample of rows (distances still
    measured within that subsample).
    """
    points = np.asarray(points, dtype=np.float64)
    labels, k = _relabel(pred)
    if len(points) != len(labels):
        raise ValueError("points and labels differ in length")
    if sample_size is not None and sample_size < len(points):
        rows = np.sort(np.random.default_rng(seed).choice(len(points), sample_size, replace=False))
        points, labels = points[rows], labels[rows]
        labels, k = _relabel(labels)
    if k < 2:
        raise UndefinedMetricError("silhouette needs at least two clusters")
    n = len(points)
    sizes = np.bincount(labels, minlength=k).astype(np.float64)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    sq = np.einsum("ij,ij->i", points, points)
    scores = np.empty(n)
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        lab = labels[start:start + chunk]
        d2 = sq[start:start + chunk, None] - 2.0 * block @ points.T + sq[None, :]
        dist = np.sqrt(np.maximum(d2, 0.0))
        dist[np.arange(len(block)), np.arange(start, start + len(block))] = 0.0
        sums = dist @ onehot
        own = sizes[lab]
        rows = np.arange(len(block))
        a = sums[rows, lab] / np.maximum(own - 1.0, 1.0)
        means = sums / sizes[None, :]
        means[rows, lab] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        s[own == 1] = 0.0
        scores[start:start + chunk] = s
    return float(scores.mean())


def _centroids(points, labels, k):
    sizes = np.bincount(labels, minlength=k)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    return sums / sizes[:, None], sizes


def calinski_harabasz(points, pred) -> float:
    points = np.asarray(points, dtype=np.float64)
    labels, k = _relabel(pred)
    n = len(points)
    if k < 2:
        raise UndefinedMetricError("Calinski-Harabasz needs at least two clusters")
    if k >= n:
        raise UndefinedMetricError("Calinski-Harabasz needs fewer clusters than points")
    cents, sizes = _centroids(points, labels, k)
    overall = points.mean(axis=0)
    within = float(np.sum((points - cents[labels]) ** 2))
    between = float(np.sum(sizes * np.sum((cents - overall) ** 2, axis=1)))
    if within == 0.0:
        return math.inf
    return between / within * (n - k) / (k - 1)


def davies_bouldin(points, pred) -> float:
    points = np.asarray(points, dtype=np.float64)
    labels, k = _relabel(pred)
    if k < 2:
        raise UndefinedMetricError("Davies-Bouldin needs at least two clusters")
    cents, sizes = _centroids(points, labels, k)
    spread = np.bincount(labels, weights=np.linalg.norm(points - cents[labels], axis=1),
                         minlength=k) / sizes
    sep = np.linalg.norm(cents[:, None, :] - cents[None, :, :], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (spread[:, None] + spread[None, :]) / sep
    ratio[sep == 0] = math.inf
    np.fill_diagonal(ratio, -math.inf)
    return float(ratio.max(axis=1).mean())


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    sil: float
    chs: float
    dbi: float
    silhouette_sampled: bool = False
    silhouette_seed: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(points, truth, pred, *, silhouette_seed: int = 0) -> MetricsReport:
    """All six metrics; silhouette is subsampled above 20,000 points."""
    n = len(points)
    sampled = n > SILHOUETTE_FULL_LIMIT
    sil = silhouette(points, pred, sample_size=SILHOUETTE_SAMPLE if sampled else None,
                     seed=silhouette_seed)
    return MetricsReport(
        acc=clustering_accuracy(truth, pred), nmi=nmi(truth, pred), ari=ari(truth, pred),
        sil=sil, chs=calinski_harabasz(points, pred), dbi=davies_bouldin(points, pred),
        silhouette_sampled=sampled, silhouette_seed=silhouette_seed if sampled else None)


@dataclass
class Aggregate:
    runs: list[float] = field(default_factory=list)
    average: float = math.nan
    best: float = math.nan


def aggregate(reports: list[MetricsReport]) -> dict[str, Aggregate]:
    """Average and best per metric; best is the minimum for DBI, maximum otherwise."""
    out = {}
    for name in METRIC_NAMES:
        runs = [float(getattr(r, name)) for r in reports]
        if not runs:
            out[name] = Aggregate()
            continue
        pick = min if name in LOWER_IS_BETTER else max
        out[name] = Aggregate(runs, float(np.mean(runs)), float(pick(runs)))
    return out


def csv_header() -> list[str]:
    return ["method", *(f"{m}_{s}" for m in METRIC_NAMES for s in ("average", "best"))]


def csv_row(method: str, agg: dict[str, Aggregate]) -> list[str]:
    row = [method]
    for m in METRIC_NAMES:
        row += [repr(agg[m].average), repr(agg[m].best)]
    return row


def write_report_csv(path, rows: list[tuple[str, dict[str, Aggregate]]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(csv_header())
        for method, agg in rows:
            w.writerow(csv_row(method, agg))


def aggregate_to_json(agg: dict[str, Aggregate]) -> dict:
    return {m: asdict(a) for m, a in agg.items()}


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
