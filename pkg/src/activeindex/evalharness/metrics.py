"""Retrieval metrics: R@1, micro average precision, IVF failure rate and the recall bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from activeindex.errors import InvalidArgumentError
from activeindex.index.presets import search


@dataclass(frozen=True)
class PrPoint:
    precision: float
    recall: float
    tau: float


def _results(index, queries, k: int, nprobe: int):
    return [search(index, q, k, nprobe) for q in np.atleast_2d(np.asarray(queries, dtype=np.float64))]


def recall_at_1(index, queries, truth, nprobe: int = 1, results=None) -> float:
    """Fraction of queries whose top-1 id equals the ground truth."""
    truth = [int(t) for t in truth]
    if not truth:
        raise InvalidArgumentError("recall_at_1 needs at least one query")
    if results is None:
        results = _results(index, queries, 1, nprobe)
    if len(results) != len(truth):
        raise InvalidArgumentError("one ground-truth id per query is required")
    hits = sum(r.top_id == t for r, t in zip(results, truth))
    return hits / len(truth)


def best_pairs(results, truth=None) -> tuple[np.ndarray, np.ndarray]:
    """Best-scoring candidate per query as ``(distance, correct)``; queries with no candidate are dropped.

    ``truth`` holds the ground-truth id of each query, or ``None`` for negative queries.
    """
    dist, correct = [], []
    for i, r in enumerate(results):
        if len(r) == 0:
            continue
        dist.append(float(r.distances[0]))
        correct.append(truth is not None and int(r.ids[0]) == int(truth[i]))
    return np.asarray(dist, dtype=np.float64), np.asarray(correct, dtype=bool)


def micro_ap_from_pairs(distances, correct, n_positive: int) -> tuple[float, list[PrPoint]]:
    """Area under the precision-recall curve swept over a global distance threshold.

    A pair is declared a match when its distance is <= tau. Every distinct
    observed distance is a threshold, so tied pairs enter together. The area
    uses the rectangle rule: sum of (recall increment) x (precision at that
    threshold). Curve points are listed by increasing tau.
    """
    d = np.asarray(distances, dtype=np.float64)
    c = np.asarray(correct, dtype=bool)
    if d.shape != c.shape:
        raise InvalidArgumentError("distances and correctness flags differ in length")
    if n_positive < 1:
        raise InvalidArgumentError("micro AP needs at least one positive query")
    if d.size == 0:
        return 0.0, []
    order = np.argsort(d, kind="stable")
    d, c = d[order], c[order]
    # last position of each run of equal distances
    ends = np.flatnonzero(np.append(d[1:] != d[:-1], True))
    tp = np.cumsum(c)[ends]
    declared = ends + 1
    precision = tp / declared
    recall = tp / n_positive
    gains = np.diff(np.concatenate(([0.0], recall)))
    ap = float(np.sum(gains * precision))
    curve = [PrPoint(float(p), float(r), float(t)) for p, r, t in zip(precision, recall, d[ends])]
    return ap, curve


def micro_ap(index, positives, truth, negatives, k: int = 10, nprobe: int = 1) -> tuple[float, list[PrPoint]]:
    """Micro AP of positive queries (with ground truth) mixed with negative queries."""
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if len(positives) == 0 or len(negatives) == 0:
        raise InvalidArgumentError("micro AP needs non-empty positive and negative query sets")
    pd, pc = best_pairs(_results(index, positives, k, nprobe), truth)
    nd, nc = best_pairs(_results(index, negatives, k, nprobe))
    return micro_ap_from_pairs(np.concatenate([pd, nd]), np.concatenate([pc, nc]), len(positives))


def decomposition_check(x, x_hat, q_x) -> float:
    """``| ||x_hat-q||^2 - (||x-q||^2 + ||x_hat-x||^2 + 2 (x-q).(x_hat-x)) |``."""
    x, x_hat, q_x = (np.asarray(v, dtype=np.float64) for v in (x, x_hat, q_x))
    if not x.shape == x_hat.shape == q_x.shape:
        raise InvalidArgumentError("decomposition_check needs vectors of equal shape")
    lhs = np.sum((x_hat - q_x) ** 2)
    rhs = np.sum((x - q_x) ** 2) + np.sum((x_hat - x) ** 2) + 2.0 * np.dot((x - q_x).ravel(), (x_hat - x).ravel())
    return float(abs(lhs - rhs))


def decomposition_relative(x, x_hat, q_x) -> float:
    """Residual of ``decomposition_check`` relative to the size of the terms involved."""
    x, x_hat, q_x = (np.asarray(v, dtype=np.float64) for v in (x, x_hat, q_x))
    scale = np.sum((x_hat - q_x) ** 2) + np.sum((x - q_x) ** 2) + np.sum((x_hat - x) ** 2)
    res = decomposition_check(x, x_hat, q_x)
    return res / scale if scale > 0 else res


def ivf_failure_rate(index, reference_features, transformed_features) -> float:
    """Fraction of pairs whose coarse cells differ: the Monte Carlo estimate of p_f."""
    a = np.atleast_2d(np.asarray(reference_features, dtype=np.float64))
    b = np.atleast_2d(np.asarray(transformed_features, dtype=np.float64))
    if a.shape != b.shape or len(a) == 0:
        raise InvalidArgumentError("ivf_failure_rate needs equally many, non-zero, paired features")
    return float(np.mean(index.assign(a) != index.assign(b)))


def recall_bound(p_f: float, n: int) -> float:
    """``1 - p_f + 3 sqrt(p_f (1 - p_f) / n)``: single-probe recall ceiling with a Monte Carlo margin."""
    if n < 1:
        raise InvalidArgumentError("recall bound needs n >= 1")
    return 1.0 - p_f + 3.0 * math.sqrt(p_f * (1.0 - p_f) / n)


def recall_bound_check(max_recall: float, p_f: float, n: int, nprobe: int = 1) -> tuple[bool, float]:
    """Check ``max_recall <= recall_bound(p_f, n)``; returns ``(holds, margin)``."""
    if nprobe != 1:
        raise InvalidArgumentError(f"the recall bound only holds for a single probe, got nprobe={nprobe}")
    margin = recall_bound(p_f, n) - max_recall
    return margin >= 0, margin
