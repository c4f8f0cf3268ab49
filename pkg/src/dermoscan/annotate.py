"""Output annotation: green bounding box, mask contour, bitmap label text.

Only box, contour and text pixels are touched; everything else stays
bit-identical to the input image.
"""

from __future__ import annotations

import numpy as np

from .imageio import Image
from .roi import BBox

GREEN = np.array([0, 255, 0], dtype=np.uint8)

# 5x7 bitmap font, one 5-bit row mask per line, MSB = leftmost column.
FONT_5X7 = {
    "A": (0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x0F, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
    " ": (0, 0, 0, 0, 0, 0, 0),
    ".": (0, 0, 0, 0, 0, 0x0C, 0x0C),
    ":": (0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0),
    "-": (0, 0, 0, 0x0E, 0, 0, 0),
    "%": (0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13),
}
GLYPH_W, GLYPH_H = 5, 7


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one zero 4-neighbor (image border counts
    as zero)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def draw_rect(pixels: np.ndarray, bbox: BBox, thickness: int = 2) -> None:
    h, w = pixels.shape[:2]
    x0, y0 = bbox.x, bbox.y
    x1, y1 = min(bbox.x + bbox.w, w), min(bbox.y + bbox.h, h)
    t = thickness
    pixels[y0:min(y0 + t, y1), x0:x1] = GREEN
    pixels[max(y1 - t, y0):y1, x0:x1] = GREEN
    pixels[y0:y1, x0:min(x0 + t, x1)] = GREEN
    pixels[y0:y1, max(x1 - t, x0):x1] = GREEN


def draw_text(pixels: np.ndarray, text: str, top: int, left: int) -> None:
    """Render text with the 5x7 font, clipped to the image bounds."""
    h, w = pixels.shape[:2]
    cx = left
    for ch in text.upper():
        glyph = FONT_5X7.get(ch, FONT_5X7[" "])
        for gy, row in enumerate(glyph):
            for gx in range(GLYPH_W):
                if row & (1 << (GLYPH_W - 1 - gx)):
                    py, px = top + gy, cx + gx
                    if 0 <= py < h and 0 <= px < w:
                        pixels[py, px] = GREEN
        cx += GLYPH_W + 1


def annotate(img: Image, bbox: BBox, mask=None, label: str = "",
             prob: float = None) -> Image:
    """Annotated copy: 2px green rectangle, optional mask contour, optional
    '<label> <prob>' text at the box's top-left."""
    if bbox.x + bbox.w > img.width or bbox.y + bbox.h > img.height:
        raise ValueError(f"bbox {bbox} exceeds image "
                         f"{img.height}x{img.width}")
    pixels = img.pixels.copy()
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    draw_rect(pixels, bbox)
    if mask is not None:
        pixels[mask_boundary(mask)] = GREEN
    if label:
        text = label if prob is None else f"{label} {prob:.2f}"
        draw_text(pixels, text, top=bbox.y + 3, left=bbox.x + 3)
    return Image(pixels)
