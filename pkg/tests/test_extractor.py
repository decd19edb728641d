import struct

import numpy as np
import pytest
from scipy import signal

from activeindex.errors import FormatError, InvalidArgumentError
from activeindex.extractor import (
    architecture,
    backward,
    extract,
    extract_batch,
    forward,
    init_weights,
    load_weights,
    save_weights,
    weights_from_bytes,
    weights_to_bytes,
)
from activeindex.extractor.network import CHANNEL_MEAN, CHANNEL_STD
from activeindex.imagelab import Image, generate_image

FD_STEP = 0.5  # pixel units


def sampled_fd_error(weights, image, upstream, coords):
    """Relative error between analytic and central-difference gradients on sampled pixels."""
    grad = backward(weights, image, upstream)
    base = np.array(image.data if isinstance(image, Image) else image)
    fd, an = [], []
    for c in coords:
        plus, minus = base.copy(), base.copy()
        plus[c] += FD_STEP
        minus[c] -= FD_STEP
        fp = extract(weights, plus) @ upstream
        fm = extract(weights, minus) @ upstream
        fd.append((fp - fm) / (2 * FD_STEP))
        an.append(grad[c])
    fd, an = np.array(fd), np.array(an)
    return np.linalg.norm(fd - an) / np.linalg.norm(an)


def sample_coords(rng, shape, n):
    return [tuple(int(rng.integers(s)) for s in shape) for _ in range(n)]


def test_features_are_unit_norm_and_deterministic(weights, small_images):
    f = extract_batch(weights, small_images)
    assert np.allclose(np.linalg.norm(f, axis=1), 1.0)
    assert np.array_equal(f, extract_batch(weights, small_images, batch_size=5))
    # BLAS may pick a different kernel for a single row, so only the last bits may differ
    assert np.allclose(f[3], extract(weights, small_images[3]), rtol=0, atol=1e-12)


def test_init_is_seeded():
    assert np.array_equal(init_weights(4).params, init_weights(4).params)
    assert not np.array_equal(init_weights(4).params, init_weights(5).params)


@pytest.mark.parametrize("size", [64, 96])
def test_backward_matches_finite_differences(weights, rng, size):
    image = generate_image(11, 2, size)
    upstream = rng.normal(size=weights.feature_dim)
    err = sampled_fd_error(weights, image, upstream, sample_coords(rng, image.shape, 60))
    assert err < 1e-3


def test_batched_backward_matches_single(weights, small_images, rng):
    batch = np.stack([im.data for im in small_images[:4]])
    up = rng.normal(size=(4, weights.feature_dim))
    g = forward(weights, batch).backward(up)
    for i in range(4):
        assert np.allclose(g[i], backward(weights, small_images[i], up[i]), atol=1e-12)


def test_backward_rejects_bad_upstream(weights, small_images):
    with pytest.raises(InvalidArgumentError):
        backward(weights, small_images[0], np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        forward(weights, np.zeros((2, 32, 32))).features


# -- independent forward oracle ---------------------------------------------


def oracle_forward(layer_params, image_64):
    """Straightforward conv / tanh / pool / linear / normalise using scipy correlation."""
    x = (image_64 - CHANNEL_MEAN) / CHANNEL_STD  # (H, W, C)
    x = np.transpose(x, (2, 0, 1))  # (C, H, W)
    for w, b, stride, pad in layer_params[:-1]:
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        out = []
        for o in range(w.shape[0]):
            acc = sum(signal.correlate2d(xp[i], w[o, i], mode="valid") for i in range(w.shape[1]))
            out.append(np.tanh(acc[::stride, ::stride] + b[o]))
        x = np.stack(out)
    pooled = x.mean(axis=(1, 2))
    w, b, _, _ = layer_params[-1]
    y = w.reshape(w.shape[0], -1) @ pooled + b
    return y / np.linalg.norm(y)


def external_weight_file(seed, resolution, dim, layer_params):
    """Writer following the documented layout, independent of the package."""
    specs = architecture(dim)
    buf = b"AIXW" + struct.pack("<I", 1) + struct.pack("<Q", seed) + struct.pack("<III", resolution, dim, len(specs))
    for s in specs:
        buf += struct.pack("<IIIII", s.out_channels, s.in_channels, s.kernel, s.stride, s.pad)
    flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b, _, _ in layer_params])
    buf += struct.pack("<Q", flat.size)
    buf += struct.pack(f"<{flat.size}d", *flat.tolist())
    return buf


def test_weight_file_cross_implementation(rng, tmp_path):
    dim = 32
    params = []
    for s in architecture(dim):
        w = rng.normal(0, np.sqrt(2.0 / (s.in_channels * s.kernel**2)), size=(s.out_channels, s.in_channels, s.kernel, s.kernel))
        params.append((w, rng.normal(0, 0.1, size=s.out_channels), s.stride, s.pad))
    path = tmp_path / "ext.aixw"
    path.write_bytes(external_weight_file(9, 64, dim, params))
    loaded = load_weights(path)
    assert (loaded.seed, loaded.input_resolution, loaded.feature_dim) == (9, 64, dim)
    image = generate_image(5, 1, 64)
    assert np.allclose(extract(loaded, image), oracle_forward(params, image.data), atol=1e-10)
    assert weights_to_bytes(loaded) == path.read_bytes()


def test_default_weights_match_oracle(weights):
    tensors = weights.tensors()
    params = [(tensors[2 * i], tensors[2 * i + 1], s.stride, s.pad) for i, s in enumerate(weights.layers)]
    image = generate_image(5, 2, 64)
    assert np.allclose(extract(weights, image), oracle_forward(params, image.data), atol=1e-10)


def test_weight_file_round_trip(weights, tmp_path):
    save_weights(weights, tmp_path / "w.aixw")
    back = load_weights(tmp_path / "w.aixw")
    assert np.array_equal(back.params, weights.params)
    assert weights_to_bytes(back) == (tmp_path / "w.aixw").read_bytes()


def test_weight_file_errors(weights):
    buf = weights_to_bytes(weights)
    for bad in (buf[:50], b"XXXX" + buf[4:], buf + b"\0", buf[:4] + struct.pack("<I", 2) + buf[8:]):
        with pytest.raises(FormatError):
            weights_from_bytes(bad)
    # layer table for another architecture
    tampered = bytearray(buf)
    struct.pack_into("<I", tampered, 28, 99)
    with pytest.raises(FormatError) as err:
        weights_from_bytes(bytes(tampered))
    assert "offset" in str(err.value)
