"""Procedural image corpus.

Each image is generated from its own counter-derived RNG, so image ``i`` of
a corpus can be regenerated without producing images ``0..i-1``. Images mix
smooth gradients, multi-octave noise textures and flat-filled shapes, which
gives both flat and textured regions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from activeindex.errors import FormatError, InvalidArgumentError
from activeindex.imagelab.image import Image
from activeindex.imagelab.ppm import read_ppm, write_ppm
from activeindex.imagelab.transforms import apply_separable, bilinear_resize_matrix, gaussian_blur_matrix
from activeindex.seeding import derive_seed, rng_for

MIN_CORPUS_SIZE = 16
GENERATOR_NAME = "procedural-v1"


def _noise_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    octaves = int(rng.integers(2, 5))
    base = int(rng.integers(2, 5))
    persistence = rng.uniform(0.4, 0.8)
    tex = np.zeros((size, size, 3))
    amp = 1.0
    for o in range(octaves):
        g = min(size, base * 2**o + 1)
        grid = rng.normal(size=(g, g, 3))
        up = bilinear_resize_matrix(size, g)
        tex += amp * apply_separable(grid, up, up)
        amp *= persistence
    sigma = rng.uniform(0.0, 1.5)
    if sigma > 0.3:
        b = gaussian_blur_matrix(size, float(sigma))
        tex = apply_separable(tex, b, b)
    tex -= tex.mean(axis=(0, 1))
    tex /= tex.std() + 1e-12
    mean = rng.uniform(40, 215, size=3)
    contrast = rng.uniform(15, 60)
    # partially grey textures keep luminance structure without saturating colours
    mix = rng.uniform(0.0, 1.0)
    tex = mix * tex.mean(axis=2, keepdims=True) + (1 - mix) * tex
    return mean + contrast * tex


def _gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    c0 = rng.uniform(0, 255, size=3)
    c1 = rng.uniform(0, 255, size=3)
    return c0 + (c1 - c0) * t[..., None]


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    kind = rng.integers(0, 3)
    cy, cx = rng.uniform(0.1, 0.9, size=2) * size
    if kind == 0:  # ellipse
        ry, rx = rng.uniform(0.08, 0.35, size=2) * size
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == 1:  # rotated rectangle
        hy, hx = rng.uniform(0.06, 0.3, size=2) * size
        a = rng.uniform(0, np.pi)
        u = np.cos(a) * (xx - cx) + np.sin(a) * (yy - cy)
        v = -np.sin(a) * (xx - cx) + np.cos(a) * (yy - cy)
        return (np.abs(u) <= hx) & (np.abs(v) <= hy)
    # triangle
    pts = rng.uniform(0.0, 1.0, size=(3, 2)) * size
    mask = np.ones((size, size), dtype=bool)
    sign = None
    for i in range(3):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        if sign is None:
            ox, oy = pts[(i + 2) % 3]
            sign = np.sign((x1 - x0) * (oy - y0) - (y1 - y0) * (ox - x0)) or 1.0
        mask &= cross * sign >= 0
    return mask


def generate_image(seed: int, index: int, size: int) -> Image:
    """Image number ``index`` of the corpus identified by ``seed``."""
    if size < MIN_CORPUS_SIZE:
        raise InvalidArgumentError(f"corpus image size must be >= {MIN_CORPUS_SIZE}, got {size}")
    rng = rng_for(seed, "corpus", index)
    layout = rng.integers(0, 3)
    if layout == 0:
        canvas = _noise_texture(rng, size)
    elif layout == 1:
        canvas = _gradient(rng, size)
    else:
        w = rng.uniform(0.2, 0.8)
        canvas = w * _noise_texture(rng, size) + (1 - w) * _gradient(rng, size)
    for _ in range(int(rng.integers(1, 6))):
        mask = _shape_mask(rng, size)
        if rng.random() < 0.6:
            fill = np.broadcast_to(rng.uniform(0, 255, size=3), canvas.shape)
        elif rng.random() < 0.5:
            fill = _gradient(rng, size)
        else:
            fill = _noise_texture(rng, size)
        canvas = np.where(mask[..., None], fill, canvas)
    return Image.from_array(canvas)


def generate_corpus(seed: int, count: int, size: int, start: int = 0) -> list[Image]:
    if count < 0:
        raise InvalidArgumentError(f"count must be >= 0, got {count}")
    if size < MIN_CORPUS_SIZE:
        raise InvalidArgumentError(f"corpus image size must be >= {MIN_CORPUS_SIZE}, got {size}")
    return [generate_image(seed, start + i, size) for i in range(count)]


# ---------------------------------------------------------------------------
# on-disk corpora


def image_filename(image_id: int) -> str:
    return f"{image_id:06d}.ppm"


def write_corpus(out_dir, seed: int, count: int, size: int) -> Path:
    """Write ``count`` generated images plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        name = image_filename(i)
        write_ppm(out / name, generate_image(seed, i, size))
        entries.append({"id": i, "file": name, "seed": derive_seed(seed, "corpus", i)})
    manifest = {
        "generator": GENERATOR_NAME,
        "seed": seed,
        "count": count,
        "size": size,
        "images": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_corpus_dir(path) -> list[tuple[int, Image]]:
    """Read ``(id, image)`` pairs from a corpus directory.

    Uses ``manifest.json`` when present; otherwise every ``*.ppm`` file is
    loaded in name order with sequential ids.
    """
    root = Path(path)
    manifest = root / "manifest.json"
    if manifest.exists():
        try:
            data = json.loads(manifest.read_text())
            entries = [(int(e["id"]), e["file"]) for e in data["images"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad corpus manifest {manifest}: {exc}") from exc
    else:
        entries = list(enumerate(sorted(p.name for p in root.glob("*.ppm"))))
    return [(i, read_ppm(root / name)) for i, name in entries]
