"""Binary PPM (P6, maxval 255) encoding and decoding."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from activeindex.errors import FormatError
from activeindex.imagelab.image import Image

_WHITESPACE = b" \t\r\n\v\f"


def encode_ppm(image: Image) -> bytes:
    """Serialize as P6; samples are rounded half-to-even and clipped to [0, 255]."""
    pixels = np.clip(np.rint(image.data), 0, 255).astype(np.uint8)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c in _WHITESPACE and c:
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("truncated PPM header", pos)
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WHITESPACE + b"#":
        pos += 1
    return buf[start:pos], start


def decode_ppm(buf: bytes) -> Image:
    buf = bytes(buf)
    if buf[:2] != b"P6":
        raise FormatError("missing P6 magic", 0)
    pos = 2
    values = []
    for _ in range(3):
        tok, start = _next_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"expected integer in header, got {tok!r}", start)
        values.append(int(tok))
        pos = start + len(tok)
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", pos)
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * 3
    if len(buf) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    try:
        return Image.from_array(raw.reshape(height, width, 3).astype(np.float64))
    except ValueError as exc:
        raise FormatError(str(exc), 0) from exc


def write_ppm(path, image: Image) -> None:
    Path(path).write_bytes(encode_ppm(image))


def read_ppm(path) -> Image:
    return decode_ppm(Path(path).read_bytes())
