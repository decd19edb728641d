"""Extractor weight files.

Little-endian layout::

    magic      "AIXW"
    version    u32 (= 1)
    seed       u64
    resolution u32
    dim        u32
    nlayers    u32
    layers     nlayers x (out u32, in u32, kernel u32, stride u32, pad u32)
    count      u64
    params     f64[count]

Parameters are the flat array of ``ExtractorWeights.params``: for each layer,
weights in (out, in, ky, kx) order followed by ``out`` biases. The layer table
must match the fixed architecture for ``dim``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from activeindex.errors import FormatError
from activeindex.extractor.network import ConvSpec, ExtractorWeights, architecture

MAGIC = b"AIXW"
VERSION = 1


def weights_to_bytes(weights: ExtractorWeights) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<IQIII", VERSION, weights.seed, weights.input_resolution, weights.feature_dim, len(weights.layers)),
    ]
    for spec in weights.layers:
        parts.append(struct.pack("<5I", spec.out_channels, spec.in_channels, spec.kernel, spec.stride, spec.pad))
    parts.append(struct.pack("<Q", weights.params.size))
    parts.append(np.ascontiguousarray(weights.params, dtype="<f8").tobytes())
    return b"".join(parts)


def weights_from_bytes(buf: bytes) -> ExtractorWeights:
    buf = bytes(buf)
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated weight file while reading {what}", pos)
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an extractor weight file", 0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}", 4)
    seed, resolution, dim, nlayers = struct.unpack("<QIII", take(20, "header"))
    table_at = pos
    layers = tuple(ConvSpec(*struct.unpack("<5I", take(20, f"layer {i}"))) for i in range(nlayers))
    if layers != architecture(dim):
        raise FormatError(f"layer table does not match the fixed architecture for dim={dim}", table_at)
    (count,) = struct.unpack("<Q", take(8, "parameter count"))
    count_at = pos - 8
    params = np.frombuffer(take(8 * count, "parameters"), dtype="<f8").astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after parameters", pos)
    try:
        return ExtractorWeights(int(seed), int(resolution), int(dim), params)
    except ValueError as exc:
        raise FormatError(str(exc), count_at) from exc


def save_weights(weights: ExtractorWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(weights))


def load_weights(path) -> ExtractorWeights:
    return weights_from_bytes(Path(path).read_bytes())
