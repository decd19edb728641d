from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from activeindex.errors import InvalidArgumentError
from activeindex.imagelab.image import Image

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class QualityStats:
    psnr_db: float
    linf: float


def _check_pair(a: Image, b: Image):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``PSNR_CAP_DB``."""
    _check_pair(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0**2 / mse))


def linf(a: Image, b: Image) -> float:
    _check_pair(a, b)
    return float(np.max(np.abs(a.data - b.data)))


def quality_stats(reference: Image, distorted: Image) -> QualityStats:
    return QualityStats(psnr_db=psnr(reference, distorted), linf=linf(reference, distorted))
