import io
import math

import numpy as np
import pytest
from PIL import Image as PILImage

from activeindex.errors import FormatError, InvalidArgumentError
from activeindex.imagelab import (
    DEFAULT_SUITE,
    Image,
    TransformSpec,
    apply_transform,
    decode_ppm,
    encode_ppm,
    generate_corpus,
    generate_image,
    linf,
    load_corpus_dir,
    psnr,
    read_ppm,
    transform_vjp,
    write_corpus,
)
from activeindex.imagelab.quality import PSNR_CAP_DB
from activeindex.imagelab.transforms import bilinear_resize_matrix, gaussian_blur_matrix, rotation_operator


def rand_image(rng, h=16, w=20):
    return Image.from_array(rng.uniform(0, 255, size=(h, w, 3)))


# -- Image ------------------------------------------------------------------


def test_image_is_read_only_and_clamped():
    im = Image.from_array(np.full((8, 8, 3), 300.0))
    assert im.data.max() == 255.0
    with pytest.raises(ValueError):
        im.data[0, 0, 0] = 1.0


def test_image_rejects_bad_shapes_and_values():
    with pytest.raises(InvalidArgumentError):
        Image.from_array(np.zeros((8, 8)))
    with pytest.raises(InvalidArgumentError):
        Image.from_array(np.zeros((4, 8, 3)))
    with pytest.raises(InvalidArgumentError):
        Image.from_array(np.full((8, 8, 3), np.nan))
    with pytest.raises(InvalidArgumentError):
        Image.from_array(np.full((8, 8, 3), -1.0), clamp=False)


def test_grey_luminance_is_exact():
    for v in (0, 1, 127, 254, 255):
        assert np.all(Image.uniform(8, 8, (v, v, v)).luminance() == v)


# -- PPM --------------------------------------------------------------------


def test_ppm_matches_pillow(rng, tmp_path):
    arr = rng.integers(0, 256, size=(13, 17, 3)).astype(np.uint8)
    PILImage.fromarray(arr, "RGB").save(tmp_path / "a.ppm")
    ours = read_ppm(tmp_path / "a.ppm")
    assert np.array_equal(ours.data, arr.astype(np.float64))
    back = PILImage.open(io.BytesIO(encode_ppm(ours)))
    assert np.array_equal(np.asarray(back), arr)


def test_ppm_header_comments_and_whitespace():
    body = bytes(range(8 * 8 * 3 % 256)) + bytes(8 * 8 * 3 - (8 * 8 * 3 % 256))
    buf = b"P6 # a comment\n8\t8\n# another\n255\n" + body
    im = decode_ppm(buf)
    assert im.shape == (8, 8, 3)


def test_ppm_round_trip_rounds_half_even(rng):
    im = Image.from_array(np.full((8, 8, 3), 2.5))
    assert decode_ppm(encode_ppm(im)).data[0, 0, 0] == 2.0
    im = rand_image(rng)
    once = decode_ppm(encode_ppm(im))
    assert encode_ppm(once) == encode_ppm(decode_ppm(encode_ppm(once)))


@pytest.mark.parametrize(
    "buf",
    [b"P3\n8 8\n255\n", b"P6\n8 8\n65535\n" + bytes(384), b"P6\n8 8\n255\n" + bytes(10), b"P6\n8", b"P6\n8 x\n255\n"],
)
def test_ppm_rejects_malformed(buf):
    with pytest.raises(FormatError):
        decode_ppm(buf)


def test_ppm_error_carries_offset():
    with pytest.raises(FormatError) as err:
        decode_ppm(b"P6\n8 8\n255\n" + bytes(10))
    assert "offset" in str(err.value)


# -- quality ----------------------------------------------------------------


def test_psnr_uniform_offset_closed_form():
    a = Image.uniform(8, 8, (100, 50, 20))
    b = Image.uniform(8, 8, (116, 66, 36))
    assert abs(psnr(a, b) - 24.049) < 1e-3


def test_psnr_known_values():
    a = Image.uniform(8, 8, (100, 100, 100))
    b = Image.uniform(8, 8, (110, 100, 100))
    mse = 100.0 / 3.0
    assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / mse))
    assert psnr(a, a) == PSNR_CAP_DB
    assert linf(a, b) == 10.0
    with pytest.raises(InvalidArgumentError):
        psnr(a, Image.uniform(9, 8, (0, 0, 0)))


# -- transforms -------------------------------------------------------------


def brute_blur(arr, sigma):
    """Direct 2-D truncated Gaussian convolution with clamped edges."""
    r = int(math.ceil(3 * sigma))
    offs = np.arange(-r, r + 1)
    w = np.exp(-(offs**2) / (2 * sigma * sigma))
    w /= w.sum()
    h, wd, _ = arr.shape
    out = np.zeros_like(arr)
    for y in range(h):
        for x in range(wd):
            acc = np.zeros(3)
            for i, dy in enumerate(offs):
                for j, dx in enumerate(offs):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), wd - 1)
                    acc += w[i] * w[j] * arr[yy, xx]
            out[y, x] = acc
    return out


def test_blur_matches_brute_force_convolution(rng):
    im = rand_image(rng, 12, 10)
    out = apply_transform(im, TransformSpec("blur", 1.3))
    assert np.allclose(out.data, brute_blur(im.data, 1.3), atol=1e-9)


def test_blur_rows_sum_to_one():
    m = gaussian_blur_matrix(20, 2.0)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_resize_matrix_preserves_constants():
    for n_out, n_in in ((7, 13), (13, 7), (64, 96)):
        assert np.allclose(bilinear_resize_matrix(n_out, n_in).sum(axis=1), 1.0)


def test_rotate_90_is_a_permutation(rng):
    arr = rng.uniform(0, 255, size=(9, 9, 3))
    out, _ = transform_vjp(arr, TransformSpec("rotate", 90.0))
    assert np.allclose(out, np.rot90(arr, 1, axes=(0, 1)))


def test_rotation_operator_has_no_weight_outside_canvas():
    op = rotation_operator(16, 16, 25.0)
    sums = np.asarray(op.sum(axis=1)).ravel()
    assert sums.max() <= 1 + 1e-12 and sums.min() >= 0


def test_center_crop_and_brightness(rng):
    im = rand_image(rng, 20, 20)
    crop = apply_transform(im, TransformSpec("center_crop", 0.25))
    assert crop.shape == (10, 10, 3)
    assert np.array_equal(crop.data, im.data[5:15, 5:15])
    br = apply_transform(im, TransformSpec("brightness", 2.0))
    assert np.allclose(br.data, np.clip(im.data * 2, 0, 255))


def test_hue_full_turn_and_grey_invariance(rng):
    grey = Image.uniform(8, 8, (90, 90, 90))
    assert np.allclose(apply_transform(grey, TransformSpec("hue", 0.3)).data, 90)
    im = rand_image(rng)
    assert np.allclose(apply_transform(im, TransformSpec("hue", 1.0)).data, im.data)
    thirds = im
    for _ in range(3):
        thirds = apply_transform(thirds, TransformSpec("hue", 1 / 3))
    assert np.allclose(thirds.data, im.data, atol=1e-6)


@pytest.mark.parametrize(
    "spec",
    [
        TransformSpec("brightness", 0.7),
        TransformSpec("contrast", 0.6),
        TransformSpec("blur", 1.5),
        TransformSpec("rotate", 25.0),
        TransformSpec("center_crop", 0.5),
        TransformSpec("resize", 0.5),
        TransformSpec("gaussian_noise", 3.0, seed=4),
    ],
)
def test_vjp_is_adjoint_of_the_linearisation(rng, spec):
    # keep away from the clamp so the map is affine around the sample
    arr = rng.uniform(60, 190, size=(16, 18, 3))
    out, vjp = transform_vjp(arr, spec)
    g = rng.normal(size=out.shape)
    v = rng.normal(size=arr.shape)
    eps = 1e-3
    jv = (transform_vjp(arr + eps * v, spec)[0] - transform_vjp(arr - eps * v, spec)[0]) / (2 * eps)
    assert np.sum(g * jv) == pytest.approx(np.sum(vjp(g) * v), rel=1e-7)


def test_hue_has_no_vjp(rng):
    _, vjp = transform_vjp(rng.uniform(0, 255, (8, 8, 3)), TransformSpec("hue", 0.2))
    with pytest.raises(InvalidArgumentError):
        vjp(np.zeros((8, 8, 3)))


@pytest.mark.parametrize("text", ["warp", "contrast:0", "center_crop:1.5", "blur:-1", "rotate:nan"])
def test_bad_transform_specs(text):
    with pytest.raises(InvalidArgumentError):
        TransformSpec.parse(text)


def test_suite_labels_and_parse_round_trip():
    labels = [t.label for t in DEFAULT_SUITE]
    assert len(labels) == 9 == len(set(labels))
    for t in DEFAULT_SUITE:
        assert TransformSpec.from_dict(t.to_dict()) == t
        assert TransformSpec.parse(f"{t.kind}:{t.parameter}") == t


# -- corpus -----------------------------------------------------------------


def test_corpus_is_deterministic_and_random_access():
    a = generate_corpus(7, 5, 24)
    b = generate_corpus(7, 5, 24)
    assert all(x.equals(y) for x, y in zip(a, b))
    assert generate_image(7, 3, 24).equals(a[3])
    assert not a[0].equals(generate_image(8, 0, 24))


def test_corpus_has_flat_and_textured_content():
    ims = generate_corpus(1, 20, 48)
    stds = [float(np.std(im.data)) for im in ims]
    assert min(stds) < max(stds) and max(stds) > 10


def test_write_corpus_round_trip(tmp_path):
    write_corpus(tmp_path / "c", 2, 4, 16)
    items = load_corpus_dir(tmp_path / "c")
    assert [i for i, _ in items] == [0, 1, 2, 3]
    for i, im in items:
        assert np.array_equal(im.data, np.rint(generate_image(2, i, 16).data))


def test_bad_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text('{"images": [{"file": "x.ppm"}]}')
    with pytest.raises(FormatError):
        load_corpus_dir(tmp_path)
