"""Deterministic differentiable feature extractor."""

from activeindex.extractor.network import (
    ExtractorWeights,
    Tape,
    architecture,
    backward,
    extract,
    extract_batch,
    forward,
    init_weights,

)
from activeindex.extractor.weightfile import load_weights, save_weights, weights_from_bytes, weights_to_bytes

__all__ = [
    "ExtractorWeights",
    "Tape",
    "architecture",
    "backward",
    "extract",
    "extract_batch",
    "forward",
    "init_weights",
    "load_weights",
    "save_weights",
    "weights_from_bytes",
    "weights_to_bytes",
]
