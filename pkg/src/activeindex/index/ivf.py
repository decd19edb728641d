"""Inverted-file indexes: IVF-PQ (optionally OPQ-rotated) and IVF-Flat.

Both share the coarse quantizer and inverted-list bookkeeping. Ids are
unsigned 32-bit integers and may appear at most once per index. Search and
reconstruct never mutate the index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from activeindex.errors import CorruptIndexError, InvalidArgumentError, NotFoundError
from activeindex.index.kmeans import kmeans, nearest
from activeindex.index.pq import (
    PqCodebook,
    adc_distances,
    adc_tables,
    check_codes,
    pq_decode,
    pq_encode,
    quantization_error,
    train_pq,
)

MAX_ID = 2**32 - 1


@dataclass
class SearchResult:
    """Hits sorted by ascending distance, ties broken by lower id."""

    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return zip(self.ids.tolist(), self.distances.tolist())

    @property
    def top_id(self) -> int | None:
        return int(self.ids[0]) if len(self.ids) else None

    @classmethod
    def empty(cls) -> SearchResult:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))


def top_k(ids: np.ndarray, dists: np.ndarray, k: int) -> SearchResult:
    order = np.lexsort((ids, dists))[:k]
    return SearchResult(ids[order].astype(np.int64), dists[order].astype(np.float64))


class _InvertedFile:
    """Coarse quantizer plus per-cell id/payload lists."""

    payload_width: int
    payload_dtype: type

    def __init__(self, coarse: np.ndarray):
        coarse = np.ascontiguousarray(coarse, dtype=np.float32)
        if coarse.ndim != 2 or coarse.shape[0] < 1:
            raise InvalidArgumentError("coarse centroids must be a (k >= 1, dim) array")
        self.coarse = coarse
        self._ids: list[list[int]] = [[] for _ in range(self.nlist)]
        self._payload: list[list[np.ndarray]] = [[] for _ in range(self.nlist)]
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._where: dict[int, tuple[int, int]] = {}

    @property
    def nlist(self) -> int:
        return self.coarse.shape[0]

    @property
    def dim(self) -> int:
        return self.coarse.shape[1]

    @property
    def ntotal(self) -> int:
        return len(self._where)

    def __contains__(self, vid: int) -> bool:
        return int(vid) in self._where

    def assign(self, x) -> np.ndarray:
        """Nearest coarse cell for each row (ties -> lowest cell index)."""
        x = self._check_vectors(x)
        return nearest(x, self.coarse.astype(np.float64))[0]

    def probe_cells(self, query: np.ndarray, nprobe: int) -> np.ndarray:
        d = np.sum((self.coarse.astype(np.float64) - query) ** 2, axis=1)
        return np.lexsort((np.arange(self.nlist), d))[:nprobe]

    def cell_of(self, vid: int) -> int:
        try:
            return self._where[int(vid)][0]
        except KeyError:
            raise NotFoundError(f"id {vid} is not in the index") from None

    def list_arrays(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        """(ids, payload) arrays of one inverted list, in insertion order."""
        if cell in self._cache:
            return self._cache[cell]
        return np.zeros(0, dtype=np.int64), np.zeros((0, self.payload_width), dtype=self.payload_dtype)

    def _refresh(self, cells) -> None:
        for cell in set(cells):
            ids = np.asarray(self._ids[cell], dtype=np.int64)
            pay = np.stack(self._payload[cell])
            ids.flags.writeable = False
            pay.flags.writeable = False
            self._cache[cell] = (ids, pay)

    def cell_sizes(self) -> np.ndarray:
        return np.array([len(i) for i in self._ids])

    def _check_vectors(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InvalidArgumentError(f"vector dim {x.shape[1]} != index dim {self.dim}")
        return x

    def _store(self, cell: int, vid: int, payload: np.ndarray) -> None:
        self._where[vid] = (cell, len(self._ids[cell]))
        self._ids[cell].append(vid)
        self._payload[cell].append(payload)

    def _check_new_ids(self, ids) -> list[int]:
        ids = [int(i) for i in ids]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("duplicate ids in batch")
        for vid in ids:
            if not 0 <= vid <= MAX_ID:
                raise InvalidArgumentError(f"id {vid} outside the u32 range")
            if vid in self._where:
                raise InvalidArgumentError(f"id {vid} is already in the index")
        return ids

    def payload_of(self, vid: int) -> np.ndarray:
        cell, pos = self._where[int(vid)] if int(vid) in self._where else (None, None)
        if cell is None:
            raise NotFoundError(f"id {vid} is not in the index")
        return self._payload[cell][pos]

    def add(self, x, vid: int) -> None:
        self.add_batch(np.atleast_2d(x), [vid])

    def add_batch(self, vectors, ids) -> None:
        x = self._check_vectors(vectors)
        ids = self._check_new_ids(ids)
        if len(ids) != x.shape[0]:
            raise InvalidArgumentError("ids and vectors differ in length")
        cells = self.assign(x)
        payloads = self._encode(x, cells)
        for vid, cell, pay in zip(ids, cells.tolist(), payloads):
            self._store(cell, vid, pay)
        self._refresh(cells.tolist())

    def search_batch(self, queries, k: int = 10, nprobe: int = 1) -> list[SearchResult]:
        q = self._check_vectors(queries)
        return [self.search(row, k, nprobe) for row in q]

    def search(self, query, k: int = 10, nprobe: int = 1) -> SearchResult:
        q = self._check_vectors(query)[0]
        if not 1 <= nprobe <= self.nlist:
            raise InvalidArgumentError(f"nprobe must be in [1, {self.nlist}], got {nprobe}")
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        all_ids, all_d = [], []
        for cell in self.probe_cells(q, nprobe).tolist():
            ids, pay = self.list_arrays(cell)
            if len(ids) == 0:
                continue
            all_ids.append(ids)
            all_d.append(self._cell_distances(q, cell, pay))
        if not all_ids:
            return SearchResult.empty()
        return top_k(np.concatenate(all_ids), np.concatenate(all_d), k)

    # subclass hooks
    def _encode(self, x: np.ndarray, cells: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cell_distances(self, q: np.ndarray, cell: int, payload: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IvfPqIndex(_InvertedFile):
    """IVF with residual product quantization (IVFADC).

    With a rotation ``R`` the residual ``x - c`` is encoded as ``pq(R (x - c))``
    and reconstructed as ``c + R^T decode(code)``. A single all-zero coarse
    centroid turns this into a plain PQ / OPQ index.
    """

    kind = "ivfpq"

    def __init__(self, coarse: np.ndarray, pq: PqCodebook, rotation: np.ndarray | None = None):
        super().__init__(coarse)
        if pq.dim != self.dim:
            raise InvalidArgumentError(f"PQ dim {pq.dim} != coarse dim {self.dim}")
        self.pq = pq
        if rotation is not None:
            rotation = np.ascontiguousarray(rotation, dtype=np.float32)
            if rotation.shape != (self.dim, self.dim):
                raise InvalidArgumentError("rotation must be (dim, dim)")
        self.rotation = rotation
        self.payload_width = pq.m
        self.payload_dtype = np.uint8
        self.train_error: float | None = None

    def _rotate(self, r: np.ndarray) -> np.ndarray:
        return r if self.rotation is None else r @ self.rotation.astype(np.float64).T

    def _unrotate(self, r: np.ndarray) -> np.ndarray:
        return r if self.rotation is None else r @ self.rotation.astype(np.float64)

    def _encode(self, x, cells):
        res = x - self.coarse[cells].astype(np.float64)
        return pq_encode(self.pq, self._rotate(res))

    def _cell_distances(self, q, cell, payload):
        try:
            check_codes(self.pq, payload)
        except CorruptIndexError as exc:
            raise CorruptIndexError(f"inverted list {cell}: {exc}") from None
        tables = adc_tables(self.pq, self._rotate(q - self.coarse[cell].astype(np.float64)))
        return adc_distances(tables, payload)

    def decode(self, cell: int, code: np.ndarray) -> np.ndarray:
        return self.coarse[cell].astype(np.float64) + self._unrotate(pq_decode(self.pq, code))

    def reconstruct(self, vid: int) -> np.ndarray:
        """Stored reproduction value: coarse centroid plus decoded residual."""
        cell = self.cell_of(vid)
        return self.decode(cell, self.payload_of(vid))

    def code_of(self, vid: int) -> np.ndarray:
        return self.payload_of(vid).copy()

    def fine_reproduction(self, vid: int) -> np.ndarray:
        """Decoded residual mapped back to feature space (excludes the coarse centroid)."""
        self.cell_of(vid)
        return self._unrotate(pq_decode(self.pq, self.payload_of(vid)))


class IvfFlatIndex(_InvertedFile):
    """IVF with exact (float32) vectors in each list."""

    kind = "ivfflat"

    def __init__(self, coarse: np.ndarray):
        super().__init__(coarse)
        self.payload_width = self.dim
        self.payload_dtype = np.float32

    def _encode(self, x, cells):
        return x.astype(np.float32)

    def _cell_distances(self, q, cell, payload):
        diff = payload.astype(np.float64) - q
        return np.einsum("ij,ij->i", diff, diff)

    def reconstruct(self, vid: int) -> np.ndarray:
        self.cell_of(vid)
        return self.payload_of(vid).astype(np.float64)


def train_ivfpq(train_vectors, k: int, m: int, ks: int, seed: int = 0, iterations: int = 20) -> IvfPqIndex:
    """Coarse k-means, then PQ trained on the residuals ``x - q_c(x)``."""
    x = np.asarray(train_vectors, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("training vectors must be 2-D")
    if x.shape[1] % m:
        raise InvalidArgumentError(f"dim {x.shape[1]} is not divisible by m={m}")
    if x.shape[0] < max(k, ks):
        raise InvalidArgumentError(f"need at least max(k, ks)={max(k, ks)} training vectors, got {x.shape[0]}")
    coarse = kmeans(x, k, iterations, seed).centroids.astype(np.float32)
    cells = nearest(x, coarse.astype(np.float64))[0]
    residuals = x - coarse[cells].astype(np.float64)
    pq = train_pq(residuals, m, ks, iterations, seed + 1)
    index = IvfPqIndex(coarse, pq)
    index.train_error = quantization_error(pq, residuals) / x.shape[0]
    return index


def train_ivfflat(train_vectors, k: int, seed: int = 0, iterations: int = 20) -> IvfFlatIndex:
    x = np.asarray(train_vectors, dtype=np.float64)
    return IvfFlatIndex(kmeans(x, k, iterations, seed).centroids.astype(np.float32))
