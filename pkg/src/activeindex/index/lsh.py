"""PCA projection followed by random-hyperplane LSH, searched by Hamming distance."""

from __future__ import annotations

import warnings

import numpy as np

from activeindex.errors import InvalidArgumentError, NotFoundError
from activeindex.index.ivf import MAX_ID, SearchResult, top_k


class LshIndex:
    kind = "lsh"

    def __init__(self, pca_mean, pca_basis, hyperplanes):
        self.pca_mean = np.ascontiguousarray(pca_mean, dtype=np.float32)
        self.pca_basis = np.ascontiguousarray(pca_basis, dtype=np.float32)
        self.hyperplanes = np.ascontiguousarray(hyperplanes, dtype=np.float32)
        if self.pca_basis.shape[1] != self.pca_mean.shape[0]:
            raise InvalidArgumentError("PCA basis and mean disagree on dimension")
        if self.hyperplanes.shape[1] != self.pca_basis.shape[0]:
            raise InvalidArgumentError("hyperplanes must live in the PCA output space")
        if self.nbits % 8:
            raise InvalidArgumentError("number of hyperplanes must be a multiple of 8")
        self._ids: list[int] = []
        self._hashes: list[np.ndarray] = []
        self._where: dict[int, int] = {}
        self._arrays = (np.zeros(0, dtype=np.int64), np.zeros((0, self.nbits // 8), dtype=np.uint8))

    @property
    def dim(self) -> int:
        return self.pca_mean.shape[0]

    @property
    def out_dim(self) -> int:
        return self.pca_basis.shape[0]

    @property
    def nbits(self) -> int:
        return self.hyperplanes.shape[0]

    @property
    def ntotal(self) -> int:
        return len(self._ids)

    def __contains__(self, vid: int) -> bool:
        return int(vid) in self._where

    def projections(self, x) -> np.ndarray:
        """Signed distances ``w_j^T P (x - mean)`` to every hyperplane, shape (n, L)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InvalidArgumentError(f"vector dim {x.shape[1]} != index dim {self.dim}")
        z = (x - self.pca_mean.astype(np.float64)) @ self.pca_basis.astype(np.float64).T
        return z @ self.hyperplanes.astype(np.float64).T

    def effective_hyperplanes(self) -> tuple[np.ndarray, np.ndarray]:
        """``(W, b)`` with ``projections(x) = x @ W.T + b`` in the original feature space."""
        w = self.hyperplanes.astype(np.float64) @ self.pca_basis.astype(np.float64)
        return w, -(w @ self.pca_mean.astype(np.float64))

    def hash_bits(self, x) -> np.ndarray:
        """Bit j is 1 when the projection on hyperplane j is non-negative."""
        return (self.projections(x) >= 0).astype(np.uint8)

    def hash(self, x) -> np.ndarray:
        return np.packbits(self.hash_bits(x), axis=1)

    def add(self, x, vid: int) -> None:
        self.add_batch(np.atleast_2d(x), [vid])

    def add_batch(self, vectors, ids) -> None:
        ids = [int(i) for i in ids]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("duplicate ids in batch")
        for vid in ids:
            if not 0 <= vid <= MAX_ID:
                raise InvalidArgumentError(f"id {vid} outside the u32 range")
            if vid in self._where:
                raise InvalidArgumentError(f"id {vid} is already in the index")
        hashes = self.hash(vectors)
        if len(ids) != len(hashes):
            raise InvalidArgumentError("ids and vectors differ in length")
        for vid, h in zip(ids, hashes):
            self._where[vid] = len(self._ids)
            self._ids.append(vid)
            self._hashes.append(h)
        self._arrays = (np.asarray(self._ids, dtype=np.int64), np.stack(self._hashes))

    def stored_hash(self, vid: int) -> np.ndarray:
        if int(vid) not in self._where:
            raise NotFoundError(f"id {vid} is not in the index")
        return self._hashes[self._where[int(vid)]]

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        return self._arrays

    def search(self, query, k: int = 10) -> SearchResult:
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        ids, hashes = self._arrays
        if len(ids) == 0:
            return SearchResult.empty()
        qh = self.hash(query)[0]
        dist = np.bitwise_count(np.bitwise_xor(hashes, qh)).sum(axis=1).astype(np.float64)
        return top_k(ids, dist, k)

    def search_batch(self, queries, k: int = 10) -> list[SearchResult]:
        return [self.search(q, k) for q in np.atleast_2d(queries)]


def lsh_search(index: LshIndex, query, k: int = 10) -> SearchResult:
    return index.search(query, k)


def _complete_basis(basis: np.ndarray, keep: int, rng: np.random.Generator) -> np.ndarray:
    """Replace rows ``keep:`` with random unit vectors orthogonal to everything before them."""
    out = basis.copy()
    for i in range(keep, out.shape[0]):
        v = rng.normal(size=out.shape[1])
        for _ in range(2):
            v -= out[:i].T @ (out[:i] @ v)
        out[i] = v / np.linalg.norm(v)
    return out


def train_pca_lsh(train_vectors, out_dim: int = 64, nbits: int = 64, seed: int = 0) -> LshIndex:
    x = np.asarray(train_vectors, dtype=np.float64)
    n, dim = x.shape
    if n <= out_dim:
        raise InvalidArgumentError(f"need more than out_dim={out_dim} training vectors, got {n}")
    if out_dim > dim:
        raise InvalidArgumentError(f"out_dim {out_dim} exceeds input dim {dim}")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:out_dim]
    basis = evecs[:, order].T
    # deterministic sign: largest-magnitude component positive
    flip = np.sign(basis[np.arange(out_dim), np.argmax(np.abs(basis), axis=1)])
    basis *= np.where(flip == 0, 1.0, flip)[:, None]
    rng = np.random.default_rng(seed)
    tol = max(evals.max(), 0.0) * dim * np.finfo(np.float64).eps * 10
    rank = int(np.sum(evals[order] > tol))
    if rank < out_dim:
        warnings.warn(
            f"training covariance has rank {rank} < {out_dim}; padding PCA basis with random orthonormal rows",
            RuntimeWarning,
            stacklevel=2,
        )
        basis = _complete_basis(basis, rank, rng)
    hyperplanes = rng.normal(size=(nbits, out_dim))
    return LshIndex(mean, basis, hyperplanes)
