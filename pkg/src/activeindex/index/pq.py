from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from activeindex.errors import CorruptIndexError, InvalidArgumentError
from activeindex.index.kmeans import kmeans, lloyd, nearest


@dataclass
class PqCodebook:
    """``m`` sub-codebooks of ``ks`` codewords each, shape (m, ks, dim // m), float32."""

    sub_codebooks: np.ndarray

    def __post_init__(self):
        sc = self.sub_codebooks
        if sc.ndim != 3:
            raise InvalidArgumentError("sub_codebooks must be (m, ks, dsub)")
        if sc.shape[1] > 256:
            raise InvalidArgumentError("ks must be <= 256 so codes fit in one byte")
        self.sub_codebooks = np.ascontiguousarray(sc, dtype=np.float32)

    @property
    def m(self) -> int:
        return self.sub_codebooks.shape[0]

    @property
    def ks(self) -> int:
        return self.sub_codebooks.shape[1]

    @property
    def dsub(self) -> int:
        return self.sub_codebooks.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.dsub


def _split(pq: PqCodebook, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != pq.dim:
        raise InvalidArgumentError(f"vector dim {x.shape[-1]} != codebook dim {pq.dim}")
    return x.reshape(*x.shape[:-1], pq.m, pq.dsub)


def train_pq(vectors, m: int, ks: int, iterations: int = 20, seed: int = 0) -> PqCodebook:
    x = np.asarray(vectors, dtype=np.float64)
    n, dim = x.shape
    if dim % m:
        raise InvalidArgumentError(f"dim {dim} is not divisible by m={m}")
    if n < ks:
        raise InvalidArgumentError(f"need at least ks={ks} training vectors, got {n}")
    dsub = dim // m
    books = np.empty((m, ks, dsub))
    for j in range(m):
        books[j] = kmeans(x[:, j * dsub : (j + 1) * dsub], ks, iterations, seed + j).centroids
    return PqCodebook(books)


def pq_encode(pq: PqCodebook, residuals) -> np.ndarray:
    """Nearest sub-codeword per subvector (ties -> lowest index); uint8 codes of shape (..., m)."""
    sub = _split(pq, residuals)
    flat = sub.reshape(-1, pq.m, pq.dsub)
    codes = np.empty((flat.shape[0], pq.m), dtype=np.uint8)
    for j in range(pq.m):
        codes[:, j] = nearest(flat[:, j], pq.sub_codebooks[j])[0]
    return codes.reshape(*sub.shape[:-2], pq.m)


def check_codes(pq: PqCodebook, codes: np.ndarray) -> None:
    if codes.size and int(codes.max()) >= pq.ks:
        raise CorruptIndexError(f"code byte {int(codes.max())} >= ks={pq.ks}")


def pq_decode(pq: PqCodebook, codes) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.shape[-1] != pq.m:
        raise InvalidArgumentError(f"code length {codes.shape[-1]} != m={pq.m}")
    check_codes(pq, codes)
    parts = pq.sub_codebooks[np.arange(pq.m), codes.astype(np.intp)].astype(np.float64)
    return parts.reshape(*codes.shape[:-1], pq.dim)


def adc_tables(pq: PqCodebook, query_residual) -> np.ndarray:
    """(m, ks) table of squared distances between each sub-codeword and the matching query subvector."""
    q = _split(pq, query_residual)
    if q.ndim != 2:
        raise InvalidArgumentError("adc_tables takes a single query vector")
    diff = pq.sub_codebooks.astype(np.float64) - q[:, None, :]
    return np.einsum("jcd,jcd->jc", diff, diff)


def adc_distances(tables: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Sum of table entries selected by each code row."""
    m = tables.shape[0]
    if codes.shape[0] == 0:
        return np.zeros(0)
    return tables[np.arange(m), codes.astype(np.intp)].sum(axis=1)


def refine_pq(pq: PqCodebook, vectors, iterations: int) -> tuple[PqCodebook, float]:
    """Lloyd iterations per sub-space starting from the current codewords; returns the new codebook and its error."""
    sub = _split(pq, vectors)
    books = np.empty(pq.sub_codebooks.shape)
    err = 0.0
    for j in range(pq.m):
        cb = lloyd(sub[:, j], pq.sub_codebooks[j].astype(np.float64), iterations)
        books[j] = cb.centroids
    new = PqCodebook(books)
    for j in range(pq.m):
        err += float(nearest(sub[:, j], new.sub_codebooks[j].astype(np.float64))[1].sum())
    return new, err


def quantization_error(pq: PqCodebook, vectors) -> float:
    x = np.asarray(vectors, dtype=np.float64)
    rec = pq_decode(pq, pq_encode(pq, x))
    return float(np.sum((x - rec) ** 2))
