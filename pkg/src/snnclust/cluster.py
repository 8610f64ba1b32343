"""k-means (k-means++ seeding, Lloyd iterations) and a PCA projector."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONVERGENCE_TOL = 1e-6
# k-means++ restarts inside each protocol run; the lowest-inertia one is kept
PROTOCOL_N_INIT = 10
NINE_RUN_CAPS = tuple(10 * r for r in range(1, 10))


@dataclass
class ClusterResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    max_iters: int = 0
    converged: bool = False
    # inertia after every assignment step, ending with the final one
    inertia_history: list[float] = field(default_factory=list)
    reported: bool = False
    n_init: int = 1


@dataclass
class PcaProjector:
    mean: np.ndarray
    components: np.ndarray  # (c, d), orthonormal rows
    explained_variance: np.ndarray

    def transform(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, codes: np.ndarray) -> np.ndarray:
        return codes @ self.components + self.mean


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (np.einsum("ij,ij->i", points, points)[:, None]
         - 2.0 * points @ centroids.T
         + np.einsum("ij,ij->i", centroids, centroids)[None, :])
    return np.maximum(d, 0.0)


def kmeans_pp_seed(points: np.ndarray, k: int, seed: int | np.random.Generator) -> np.ndarray:
    """k-means++ initial centroids, each a distinct row of ``points``."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # fewer distinct locations than k: pick an unused row uniformly
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(points, points[idx:idx + 1]).ravel())
    return points[chosen].copy()


def _assign(points, centroids):
    labels = _sq_dists(points, centroids).argmin(axis=1)
    # exact residuals for the chosen centroid, free of expansion round-off
    return labels, np.sum((points - centroids[labels]) ** 2, axis=1)


def kmeans(points: np.ndarray, k: int, max_iters: int = 300, seed: int = 0,
           n_init: int = 1) -> ClusterResult:
    """Lloyd's algorithm from k-means++ seeds.

    Stops once no centroid moves more than ``1e-6`` times the RMS spread of
    the data, or after ``max_iters`` update steps. An empty cluster is
    re-seeded at the point farthest from its current centroid. The returned
    assignment always matches the returned centroids.

    With ``n_init > 1`` the seeding and Lloyd steps are repeated from fresh
    k-means++ draws of one random stream and the lowest final inertia wins
    (the earliest on ties). ``n_init=1`` is a single plain run.
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(np.mean(np.sum((points - points.mean(axis=0)) ** 2, axis=1)))
    best = None
    for _ in range(n_init):
        res = _lloyd(points, kmeans_pp_seed(points, k, rng), max_iters, CONVERGENCE_TOL * scale)
        if best is None or res[2] < best[2]:
            best = res
    centroids, labels, inertia, iterations, converged, history = best
    return ClusterResult(centroids, labels, inertia, iterations, int(seed), max_iters,
                         converged, history, n_init=n_init)


def _lloyd(points, centroids, max_iters, tol):
    k = len(centroids)
    labels, dist = _assign(points, centroids)
    history = [float(dist.sum())]
    iterations = 0
    converged = False
    while iterations < max_iters:
        iterations += 1
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            far = np.argsort(-dist, kind="stable")[:len(empty)]
            new[empty] = points[far]
        shift = np.sqrt(np.max(np.sum((new - centroids) ** 2, axis=1)))
        centroids = new
        labels, dist = _assign(points, centroids)
        history.append(float(dist.sum()))
        if shift <= tol:
            converged = True
            break
    return centroids, labels, history[-1], iterations, converged, history


def nine_run_protocol(points: np.ndarray, k: int, base_seed: int,
                      n_init: int = PROTOCOL_N_INIT) -> list[ClusterResult]:
    """Nine independent k-means runs capped at 10, 20, ..., 90 iterations.

    Each run keeps the best of ``n_init`` k-means++ restarts by inertia.
    The ninth run is marked ``reported``; it is the one to score.
    """
    seeds = np.random.SeedSequence(base_seed).generate_state(len(NINE_RUN_CAPS))
    results = [kmeans(points, k, cap, int(s), n_init) for cap, s in zip(NINE_RUN_CAPS, seeds)]
    results[-1].reported = True
    return results


def reported_result(results: list[ClusterResult]) -> ClusterResult:
    return next(r for r in results if r.reported)


def pca_fit(points: np.ndarray, c: int) -> PcaProjector:
    """Top-``c`` principal axes of the sample covariance."""
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    if not 1 <= c <= min(n, d):
        raise ValueError(f"need 1 <= c <= min(N, d) = {min(n, d)}, got {c}")
    mean = points.mean(axis=0)
    centred = points - mean
    cov = centred.T @ centred / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:c]
    components = evecs[:, order].T
    # sign convention: largest-magnitude loading of each axis is positive
    flip = np.sign(components[np.arange(c), np.abs(components).argmax(axis=1)])
    components *= flip[:, None]
    return PcaProjector(mean, components, np.maximum(evals[order], 0.0))


def pca_transform(proj: PcaProjector, points: np.ndarray) -> np.ndarray:
    return proj.transform(points)


def write_cluster_csv(result: ClusterResult, directory) -> tuple[Path, Path]:
    """Write ``centroids.csv`` and ``assignments.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cpath, apath = directory / "centroids.csv", directory / "assignments.csv"
    m = result.centroids.shape[1]
    with open(cpath, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cluster", *(f"mu{j}" for j in range(m))])
        for i, row in enumerate(result.centroids):
            w.writerow([i, *(repr(float(v)) for v in row)])
    with open(apath, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "cluster"])
        for i, a in enumerate(result.assignments):
            w.writerow([i, int(a)])
    return cpath, apath
