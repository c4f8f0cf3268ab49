"""Binary PPM (P6) / PGM (P5) image I/O and the 8-bit Image type.

These two formats are the package's core testable image representation:
lossless, header + raw bytes, no codec dependency.  Compressed formats
(PNG/JPEG/BMP) are accepted only at the HTTP service boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """Malformed or unsupported PPM/PGM content."""


@dataclass
class Image:
    """8-bit pixels [H,W,C] with C = 1 (gray/mask) or 3 (color)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be [H,W,1] or [H,W,3], got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if np.any((arr < 0) | (arr > 255)):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.pixels = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def as_float(self) -> np.ndarray:
        """Float64 view in [0,1]; exactly pixels / 255."""
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, arr: np.ndarray) -> "Image":
        """Quantize a [0,1] float array to 8 bits (round half to even)."""
        q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
        return cls(q)

    def is_binary(self) -> bool:
        return bool(np.isin(self.pixels, (0, 255)).all())


def _read_token(buf: bytes, pos: int) -> tuple:
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return buf[start:pos], pos


def read_ppm(path) -> Image:
    """Read a binary P6 (color) or P5 (gray) file with maxval 255."""
    buf = Path(path).read_bytes()
    try:
        magic, pos = _read_token(buf, 0)
    except ImageFormatError:
        raise ImageFormatError(f"{path}: empty or truncated header") from None
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"{path}: unsupported magic {magic!r} "
                               "(binary P6/P5 only)")
    channels = 3 if magic == b"P6" else 1
    try:
        wtok, pos = _read_token(buf, pos)
        htok, pos = _read_token(buf, pos)
        mtok, pos = _read_token(buf, pos)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (ImageFormatError, ValueError):
        raise ImageFormatError(f"{path}: malformed header") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    payload = buf[pos:pos + expected]
    if len(payload) != expected:
        raise ImageFormatError(f"{path}: truncated payload "
                               f"({len(payload)} of {expected} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr.copy())


def write_ppm(img: Image, path) -> None:
    """Write P6 for color images, P5 for single-channel ones."""
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())
