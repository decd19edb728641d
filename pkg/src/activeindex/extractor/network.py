"""A small convolutional feature extractor with hand-written reverse mode.

Pipeline: bilinear resize to ``input_resolution`` squared, per-channel
normalisation, three stride-2 tanh convolutions, global average pooling, a
linear projection and L2 normalisation. Activations are kept channels-last
(batch, height, width, channels) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from activeindex.errors import InvalidArgumentError, NumericError
from activeindex.imagelab.image import Image
from activeindex.imagelab.transforms import bilinear_resize_matrix
from activeindex.seeding import rng_for

CHANNEL_MEAN = np.array([0.485, 0.456, 0.406]) * 255.0
CHANNEL_STD = np.array([0.229, 0.224, 0.225]) * 255.0

DEFAULT_RESOLUTION = 64
DEFAULT_DIM = 64


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    in_channels: int
    kernel: int
    stride: int
    pad: int

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel


def architecture(feature_dim: int = DEFAULT_DIM) -> tuple[ConvSpec, ...]:
    """Fixed layer table; the last entry is the linear head (kernel 1, no padding)."""
    return (
        ConvSpec(16, 3, 5, 2, 2),
        ConvSpec(32, 16, 5, 2, 2),
        ConvSpec(64, 32, 3, 2, 1),
        ConvSpec(feature_dim, 64, 1, 1, 0),
    )


def _param_shapes(layers):
    shapes = []
    for spec in layers:
        shapes.append((spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
        shapes.append((spec.out_channels,))
    return shapes


@dataclass(frozen=True, eq=False)
class ExtractorWeights:
    seed: int
    input_resolution: int
    feature_dim: int
    params: np.ndarray
    layers: tuple[ConvSpec, ...] = field(init=False, repr=False)

    def __post_init__(self):
        layers = architecture(self.feature_dim)
        object.__setattr__(self, "layers", layers)
        expected = sum(int(np.prod(s)) for s in _param_shapes(layers))
        if self.params.shape != (expected,):
            raise InvalidArgumentError(f"expected {expected} parameters, got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise InvalidArgumentError("extractor parameters must be finite")
        if self.input_resolution < 8:
            raise InvalidArgumentError("input_resolution must be >= 8")
        self.params.flags.writeable = False

    def tensors(self) -> list[np.ndarray]:
        """Views ``[w0, b0, w1, b1, ...]`` into the flat parameter array; weights are (out, in, k, k)."""
        out, pos = [], 0
        for shape in _param_shapes(self.layers):
            n = int(np.prod(shape))
            out.append(self.params[pos : pos + n].reshape(shape))
            pos += n
        return out


def init_weights(seed: int, input_resolution: int = DEFAULT_RESOLUTION, feature_dim: int = DEFAULT_DIM) -> ExtractorWeights:
    """He-normal weights (variance 2 / fan_in) and zero biases, drawn from a seeded stream."""
    layers = architecture(feature_dim)
    chunks = []
    for i, spec in enumerate(layers):
        rng = rng_for(seed, "extractor", i)
        w = rng.normal(0.0, np.sqrt(2.0 / spec.fan_in), size=(spec.out_channels, spec.fan_in))
        chunks.append(w.ravel())
        chunks.append(np.zeros(spec.out_channels))
    return ExtractorWeights(seed, input_resolution, feature_dim, np.concatenate(chunks))


# ---------------------------------------------------------------------------
# convolution primitives (channels-last)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(B, H, W, C) -> (B, Ho, Wo, C*k*k) patches ordered (C, ky, kx)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    b, ho, wo = win.shape[:3]
    return win.reshape(b, ho, wo, -1)


def _col2im(cols: np.ndarray, in_shape, k: int, stride: int, pad: int) -> np.ndarray:
    b, h, w, c = in_shape
    _, ho, wo, _ = cols.shape
    cols = cols.reshape(b, ho, wo, c, k, k)
    out = np.zeros((b, h + 2 * pad, w + 2 * pad, c))
    for ky in range(k):
        for kx in range(k):
            out[:, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride, :] += cols[..., ky, kx]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w, :]
    return out


class Tape:
    """Saved forward state for one batch; ``backward`` gives pixel gradients."""

    def __init__(self, weights: ExtractorWeights, in_shape, resize, cache, pooled_raw, features):
        self.weights = weights
        self.in_shape = in_shape
        self.resize = resize
        self.cache = cache
        self.pooled_raw = pooled_raw
        self.features = features

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_b <features[b], upstream[b]>`` with respect to the input pixels."""
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != self.features.shape:
            raise InvalidArgumentError(f"upstream shape {upstream.shape} != feature shape {self.features.shape}")
        if not np.all(np.isfinite(upstream)):
            raise InvalidArgumentError("upstream gradient must be finite")
        tensors = self.weights.tensors()
        layers = self.weights.layers

        # L2 normalisation: d(y/|y|) = (I - x x^T) / |y|
        x = self.features
        norm = np.linalg.norm(self.pooled_raw, axis=1, keepdims=True)
        dy = (upstream - x * np.sum(x * upstream, axis=1, keepdims=True)) / norm

        w_fc = tensors[-2].reshape(layers[-1].out_channels, -1)
        dpool = dy @ w_fc  # (B, 64)

        conv_layers = layers[:-1]
        a_last = self.cache[-1][1]
        b, ho, wo, c = a_last.shape
        da = np.broadcast_to(dpool[:, None, None, :] / (ho * wo), a_last.shape)

        for li in range(len(conv_layers) - 1, -1, -1):
            spec = conv_layers[li]
            cols, act, x_shape = self.cache[li]
            dz = da * (1.0 - act * act)
            wmat = tensors[2 * li].reshape(spec.out_channels, -1)
            dcols = dz @ wmat
            da = _col2im(dcols, x_shape, spec.kernel, spec.stride, spec.pad)

        dx_norm = da / CHANNEL_STD  # (B, R, R, 3)
        rh, rw = self.resize
        if rh is None:
            return dx_norm
        tmp = np.einsum("rh,brwc->bhwc", rh, dx_norm, optimize=True)
        return np.einsum("bhrc,rw->bhwc", tmp, rw, optimize=True)


def forward(weights: ExtractorWeights, batch: np.ndarray) -> Tape:
    """Run the network on a (B, H, W, 3) pixel array; all images share one size."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[-1] != 3:
        raise InvalidArgumentError(f"expected (B, H, W, 3) batch, got {batch.shape}")
    b, h, w, _ = batch.shape
    r = weights.input_resolution
    if (h, w) == (r, r):
        resize = (None, None)
        x = batch
    else:
        rh = bilinear_resize_matrix(r, h)
        rw = bilinear_resize_matrix(r, w)
        resize = (rh, rw)
        tmp = np.einsum("rh,bhwc->brwc", rh, batch, optimize=True)
        x = np.einsum("brwc,sw->brsc", tmp, rw, optimize=True)
    x = (x - CHANNEL_MEAN) / CHANNEL_STD

    tensors = weights.tensors()
    cache = []
    for li, spec in enumerate(weights.layers[:-1]):
        cols = _im2col(x, spec.kernel, spec.stride, spec.pad)
        wmat = tensors[2 * li].reshape(spec.out_channels, -1)
        z = cols @ wmat.T + tensors[2 * li + 1]
        act = np.tanh(z)
        cache.append((cols, act, x.shape))
        x = act
    pooled = x.mean(axis=(1, 2))
    head = weights.layers[-1]
    y = pooled @ tensors[-2].reshape(head.out_channels, -1).T + tensors[-1]
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    if not np.all(np.isfinite(y)) or np.any(norm == 0):
        raise NumericError("extractor produced a non-finite or zero pre-normalisation feature")
    return Tape(weights, batch.shape, resize, cache, y, y / norm)


def _as_pixels(image) -> np.ndarray:
    return image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)


def extract(weights: ExtractorWeights, image) -> np.ndarray:
    """Unit-norm feature vector of one image (``Image`` or (h, w, 3) array)."""
    return forward(weights, _as_pixels(image)[None]).features[0]


def extract_batch(weights: ExtractorWeights, images, batch_size: int = 64) -> np.ndarray:
    """Features for a sequence of images of possibly different sizes, in input order."""
    pixels = [_as_pixels(im) for im in images]
    out = np.empty((len(pixels), weights.feature_dim))
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(pixels):
        groups.setdefault(p.shape, []).append(i)
    for idx in groups.values():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start : start + batch_size]
            out[chunk] = forward(weights, np.stack([pixels[i] for i in chunk])).features
    return out


def backward(weights: ExtractorWeights, image, upstream) -> np.ndarray:
    """Gradient of ``<extract(weights, image), upstream>`` with respect to each pixel."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (weights.feature_dim,):
        raise InvalidArgumentError(f"upstream must have shape ({weights.feature_dim},), got {upstream.shape}")
    tape = forward(weights, _as_pixels(image)[None])
    return tape.backward(upstream[None])[0]
