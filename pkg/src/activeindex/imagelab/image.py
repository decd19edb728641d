from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from activeindex.errors import InvalidArgumentError

MIN_SIDE = 8
CHANNELS = 3


@dataclass(frozen=True, eq=False)
class Image:
    """RGB raster with float samples in [0, 255].

    ``data`` has shape ``(height, width, 3)``: row-major, channels
    interleaved per pixel (the same order as a binary PPM payload). The
    array is marked read-only so images can be shared freely.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 3 or arr.shape[2] != CHANNELS:
            raise InvalidArgumentError(f"expected (h, w, 3) array, got shape {arr.shape}")
        if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
            raise InvalidArgumentError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape[:2]}")
        if arr.dtype != np.float64:
            raise InvalidArgumentError("image data must be float64")
        if arr.flags.writeable:
            raise InvalidArgumentError("image data must be read-only; use Image.from_array")

    @classmethod
    def from_array(cls, arr, *, clamp: bool = True) -> Image:
        """Copy ``arr`` into a new image, clamping to [0, 255] unless told not to."""
        a = np.array(arr, dtype=np.float64, copy=True)
        if a.ndim != 3 or a.shape[-1] != CHANNELS:
            raise InvalidArgumentError(f"expected (h, w, 3) array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("image contains non-finite values")
        if clamp:
            np.clip(a, 0.0, 255.0, out=a)
        elif a.min() < 0.0 or a.max() > 255.0:
            raise InvalidArgumentError("image values outside [0, 255]")
        a.flags.writeable = False
        return cls(a)

    @classmethod
    def uniform(cls, height: int, width: int, rgb) -> Image:
        arr = np.empty((height, width, CHANNELS))
        arr[...] = np.asarray(rgb, dtype=np.float64)
        return cls.from_array(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def luminance(self) -> np.ndarray:
        """Rec. 601 luma; integer weights keep grey pixels exactly grey."""
        d = self.data
        return (299.0 * d[..., 0] + 587.0 * d[..., 1] + 114.0 * d[..., 2]) / 1000.0

    def equals(self, other: Image) -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"Image({self.height}x{self.width})"
