from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from activeindex.errors import InvalidArgumentError


def squared_distances(x: np.ndarray, c: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Pairwise squared Euclidean distances computed by explicit differences.

    Slower than the dot-product expansion but free of cancellation, so
    nearest-centroid ties resolve the same way a brute-force scan would.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    out = np.empty((x.shape[0], c.shape[0]))
    for s in range(0, x.shape[0], chunk):
        diff = x[s : s + chunk, None, :] - c[None, :, :]
        out[s : s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest(x: np.ndarray, c: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest row of ``c`` for each row of ``x`` (ties -> lowest index) and its squared distance.

    Candidates come from the dot-product expansion; rows whose best and
    runner-up are within rounding error are re-ranked with explicit
    differences, so the answer matches a brute-force scan.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    cc = np.einsum("ij,ij->i", c, c)
    idx = np.empty(x.shape[0], dtype=np.intp)
    for s in range(0, x.shape[0], chunk):
        xs = x[s : s + chunk]
        xx = np.einsum("ij,ij->i", xs, xs)
        d = xx[:, None] - 2.0 * (xs @ c.T) + cc[None, :]
        best = np.argmin(d, axis=1)
        dmin = d[np.arange(len(best)), best]
        tol = 1e-9 * (xx + cc.max()) + 1e-300
        close = np.count_nonzero(d <= (dmin + tol)[:, None], axis=1) > 1
        if np.any(close):
            rows = np.flatnonzero(close)
            best[rows] = np.argmin(squared_distances(xs[rows], c), axis=1)
        idx[s : s + chunk] = best
    diff = x - c[idx]
    return idx, np.einsum("ij,ij->i", diff, diff)


@dataclass
class Codebook:
    centroids: np.ndarray
    objective_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise InvalidArgumentError("codebook needs a (k >= 1, dim) centroid array")
        if not np.all(np.isfinite(self.centroids)):
            raise InvalidArgumentError("codebook centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def assign(self, x: np.ndarray) -> np.ndarray:
        return nearest(np.atleast_2d(x), self.centroids)[0]

    def objective(self, x: np.ndarray) -> float:
        return float(nearest(x, self.centroids)[1].sum())


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding (D^2 sampling)."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = squared_distances(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            pick = int(rng.integers(n))
        centers[i] = x[pick]
        d2 = np.minimum(d2, squared_distances(x, centers[i : i + 1])[:, 0])
    return centers


def lloyd(x: np.ndarray, init: np.ndarray, iterations: int) -> Codebook:
    """Lloyd iterations from the given centroids.

    ``objective_trace[t]`` is the total squared error after the t-th
    assignment step; empty clusters are re-seeded with the points currently
    farthest from their centroid, so the trace never increases.
    """
    x = np.asarray(x, dtype=np.float64)
    centers = np.array(init, dtype=np.float64, copy=True)
    k = centers.shape[0]
    labels, d2 = nearest(x, centers)
    trace = [float(d2.sum())]
    for _ in range(iterations):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # farthest points first; stable order breaks ties by lower point index
            order = np.argsort(-d2, kind="stable")
            for ci, pi in zip(empty, order[: empty.size]):
                centers[ci] = x[pi]
        labels, d2 = nearest(x, centers)
        trace.append(float(d2.sum()))
    return Codebook(centers, trace)


def kmeans(vectors, k: int, iterations: int = 20, seed: int = 0) -> Codebook:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("kmeans expects a 2-D array of vectors")
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if x.shape[0] < k:
        raise InvalidArgumentError(f"need at least k={k} vectors, got {x.shape[0]}")
    if iterations < 1:
        raise InvalidArgumentError("iterations must be >= 1")
    if k == 1:
        c = x.mean(axis=0, keepdims=True)
        return Codebook(c, [float(squared_distances(x, c).sum())])
    rng = np.random.default_rng(seed)
    return lloyd(x, kmeans_plusplus(x, k, rng), iterations)
