from __future__ import annotations

import numpy as np

from activeindex.errors import InvalidArgumentError, NumericError
from activeindex.index.ivf import IvfPqIndex
from activeindex.index.pq import PqCodebook, pq_decode, pq_encode, quantization_error, refine_pq, train_pq


def procrustes(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` minimising ``||source @ R.T - target||_F``."""
    m = target.T @ source
    try:
        u, _, vt = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"SVD failed on the {m.shape} cross-covariance (finite: {bool(np.all(np.isfinite(m)))}, "
            f"norm: {np.linalg.norm(m):.3g})"
        ) from exc
    return u @ vt


def train_opq(train_vectors, m: int, ks: int, rounds: int = 5, seed: int = 0, iterations: int = 20,
              refine_iterations: int = 4):
    """Alternate PQ training and Procrustes rotation updates.

    Round 1 is plain PQ with ``R = I``. Each later round fits ``R`` to the
    current codes, then refines the codewords by Lloyd iterations on the
    rotated data, so the reconstruction error never increases. Returns
    ``(R, pq, errors)`` where ``errors[t]`` is the mean squared reconstruction
    error after round ``t + 1``.
    """
    x = np.asarray(train_vectors, dtype=np.float64)
    if rounds < 1:
        raise InvalidArgumentError("rounds must be >= 1")
    if x.ndim != 2 or x.shape[1] % m:
        raise InvalidArgumentError(f"training data must be (n, dim) with dim divisible by m={m}")
    n, dim = x.shape
    rot = np.eye(dim)
    pq = train_pq(x, m, ks, iterations, seed)
    errors = [quantization_error(pq, x) / n]
    for _ in range(rounds - 1):
        codes = pq_encode(pq, x @ rot.T)
        rot = procrustes(x, pq_decode(pq, codes))
        pq, err = refine_pq(pq, x @ rot.T, refine_iterations)
        errors.append(err / n)
    return rot, pq, errors


def train_opq_index(train_vectors, m: int, ks: int, rounds: int = 5, seed: int = 0) -> IvfPqIndex:
    """Flat OPQ index: one all-zero coarse cell and a rotated product quantizer."""
    x = np.asarray(train_vectors, dtype=np.float64)
    rot, pq, errors = train_opq(x, m, ks, rounds, seed)
    index = IvfPqIndex(np.zeros((1, x.shape[1]), dtype=np.float32), pq, rot)
    index.train_error = errors[-1]
    return index


def train_pq_index(train_vectors, m: int, ks: int, seed: int = 0) -> IvfPqIndex:
    """Flat PQ index: one all-zero coarse cell, no rotation."""
    x = np.asarray(train_vectors, dtype=np.float64)
    pq: PqCodebook = train_pq(x, m, ks, seed=seed)
    index = IvfPqIndex(np.zeros((1, x.shape[1]), dtype=np.float32), pq)
    index.train_error = quantization_error(pq, x) / x.shape[0]
    return index
