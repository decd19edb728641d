"""Indexation losses that pull a feature towards what the index stored for it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from activeindex.errors import InvalidArgumentError
from activeindex.index.ivf import IvfFlatIndex, IvfPqIndex
from activeindex.index.lsh import LshIndex

LOSS_KINDS = ("ivfpq", "ivf", "pq", "opq", "lsh")


@dataclass(frozen=True, eq=False)
class Target:
    """Frozen activation target derived from the indexed feature ``x_o``.

    Quantizer kinds carry a ``vector``; ``lsh`` carries the effective
    hyperplanes ``weights`` (L, d), their ``offsets`` and the stored bit
    ``signs`` (+1 / -1).
    """

    kind: str
    vector: np.ndarray | None = None
    weights: np.ndarray | None = None
    offsets: np.ndarray | None = None
    signs: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"unknown loss kind {self.kind!r}")
        if self.kind == "lsh":
            if self.weights is None or self.signs is None:
                raise InvalidArgumentError("lsh target needs weights and signs")
        elif self.vector is None:
            raise InvalidArgumentError(f"{self.kind} target needs a vector")


def indexation_loss(x, target: Target, kind: str | None = None) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to the feature ``x``.

    Quantizer kinds use ``||x - target||^2``. LSH uses
    ``-(1/L) sum_j s_j (w_j^T x + b_j)``, which pushes ``x`` deeper on the
    stored side of every hyperplane.
    """
    if kind is not None and kind != target.kind:
        raise InvalidArgumentError(f"loss kind {kind!r} does not match target kind {target.kind!r}")
    x = np.asarray(x, dtype=np.float64)
    if target.kind == "lsh":
        if x.shape != (target.weights.shape[1],):
            raise InvalidArgumentError(f"feature shape {x.shape} does not match hyperplanes {target.weights.shape}")
        nbits = target.weights.shape[0]
        proj = target.weights @ x
        if target.offsets is not None:
            proj = proj + target.offsets
        value = -float(np.dot(target.signs, proj)) / nbits
        grad = -(target.signs @ target.weights) / nbits
        return value, grad
    if x.shape != target.vector.shape:
        raise InvalidArgumentError(f"feature shape {x.shape} != target shape {target.vector.shape}")
    diff = x - target.vector
    return float(diff @ diff), 2.0 * diff


def _is_flat_quantizer(index: IvfPqIndex) -> bool:
    return index.nlist == 1 and not np.any(index.coarse)


def make_target(index, vid: int, kind: str) -> Target:
    """Target for ``vid`` read back from the index (the index is not modified)."""
    if kind not in LOSS_KINDS:
        raise InvalidArgumentError(f"unknown loss kind {kind!r}")
    if kind == "lsh":
        if not isinstance(index, LshIndex):
            raise InvalidArgumentError("lsh loss needs an LshIndex")
        bits = np.unpackbits(index.stored_hash(vid))[: index.nbits]
        weights, offsets = index.effective_hyperplanes()
        return Target("lsh", weights=weights, offsets=offsets, signs=np.where(bits == 1, 1.0, -1.0))
    if kind == "ivf":
        if not isinstance(index, (IvfPqIndex, IvfFlatIndex)):
            raise InvalidArgumentError("ivf loss needs an inverted-file index")
        return Target("ivf", vector=index.coarse[index.cell_of(vid)].astype(np.float64))
    if not isinstance(index, IvfPqIndex):
        raise InvalidArgumentError(f"{kind} loss needs a product-quantized index")
    if kind in ("pq", "opq"):
        if not _is_flat_quantizer(index):
            raise InvalidArgumentError(f"{kind} loss needs a flat (single zero cell) quantizer index")
        if (kind == "opq") != (index.rotation is not None):
            raise InvalidArgumentError(f"{kind} loss does not match the index rotation")
    return Target(kind, vector=index.reconstruct(vid))
