"""Pixel-domain just-noticeable-difference map.

Luminance adaptation and contrast masking are combined with a nonlinear
additivity model, then spread over RGB inversely to the luminance mixing
weights (the eye is least sensitive to blue).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from activeindex.imagelab.image import Image

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T

MASKING_GAIN = 16.0
MASKING_BETA = 26.0
OVERLAP = 0.3
BACKGROUND_PATCH = 5
LUMA = np.array([0.299, 0.587, 0.114])
CHANNEL_SCALE = 0.072 / LUMA


def contrast_masking(y: np.ndarray) -> np.ndarray:
    gx = ndimage.correlate(y, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(y, SOBEL_Y, mode="nearest")
    cl = np.sqrt(gx * gx + gy * gy)
    return 0.115 * MASKING_GAIN * cl**2.4 / (cl * cl + MASKING_BETA**2)


def background_luminance(y: np.ndarray) -> np.ndarray:
    """Mean over a BACKGROUND_PATCH square centred on each pixel, edges clamped."""
    r = BACKGROUND_PATCH // 2
    padded = np.pad(y, r, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (BACKGROUND_PATCH, BACKGROUND_PATCH))
    return win.sum(axis=(2, 3)) / BACKGROUND_PATCH**2


def luminance_adaptation(y: np.ndarray) -> np.ndarray:
    bg = background_luminance(y)
    dark = 17.0 * (1.0 - np.sqrt(np.clip(bg, 0.0, None) / 127.0))
    bright = 3.0 * (bg - 127.0) / 128.0 + 3.0
    return np.where(bg < 127.0, dark, bright)


def jnd_luma(image: Image) -> np.ndarray:
    """Single-channel JND amplitude ``H`` (pixel units)."""
    y = image.luminance()
    la = luminance_adaptation(y)
    mc = contrast_masking(y)
    return la + mc - OVERLAP * np.minimum(la, mc)


def jnd_map(image: Image) -> np.ndarray:
    """Per-channel JND amplitudes, shape (h, w, 3)."""
    return jnd_luma(image)[..., None] * CHANNEL_SCALE
