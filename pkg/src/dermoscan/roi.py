"""Bounding boxes from predicted masks.

Pipeline: threshold -> binarize -> keep the largest 4-connected component ->
tight box -> 5 % margin clamped to the image.  An empty thresholded mask
falls back to the full-image box with a degenerate flag instead of failing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imageio import Image

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)


@dataclass
class BBox:
    """x,y is the top-left corner in pixel coordinates; w,h >= 1."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0:
            raise ValueError(f"degenerate bbox {self}")

    def clamped(self, height: int, width: int) -> "BBox":
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.x + self.w, width)
        y1 = min(self.y + self.h, height)
        return BBox(x=x0, y=y0, w=max(x1 - x0, 1), h=max(y1 - y0, 1))

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


def largest_component(binary: np.ndarray) -> np.ndarray:
    """Boolean mask of the largest 4-connected component (empty in, empty out)."""
    labeled, count = ndimage.label(binary, structure=FOUR_CONNECTED)
    if count == 0:
        return np.zeros_like(binary, dtype=bool)
    sizes = ndimage.sum_labels(np.ones_like(labeled), labeled,
                               index=np.arange(1, count + 1))
    keep = int(np.argmax(sizes)) + 1
    return labeled == keep


def tight_bbox(component: np.ndarray) -> BBox:
    rows = np.flatnonzero(component.any(axis=1))
    cols = np.flatnonzero(component.any(axis=0))
    if rows.size == 0:
        raise ValueError("tight_bbox of an empty mask")
    return BBox(x=int(cols[0]), y=int(rows[0]),
                w=int(cols[-1] - cols[0] + 1), h=int(rows[-1] - rows[0] + 1))


def extract_roi(mask_probs: np.ndarray, source_img: Image,
                threshold: float = 0.5, margin: float = 0.05):
    """Returns (bbox, cropped Image, degenerate flag).

    ``mask_probs`` is [H,W] (or [H,W,1]) in [0,1] at the source image's
    resolution.
    """
    probs = np.asarray(mask_probs, dtype=np.float64)
    if probs.ndim == 3 and probs.shape[2] == 1:
        probs = probs[:, :, 0]
    if probs.shape != (source_img.height, source_img.width):
        raise ValueError(f"mask {probs.shape} does not match image "
                         f"{source_img.height}x{source_img.width}")
    h, w = probs.shape
    binary = probs >= threshold
    if not binary.any():
        bbox = BBox(x=0, y=0, w=w, h=h)
        return bbox, Image(source_img.pixels.copy()), True
    comp = largest_component(binary)
    box = tight_bbox(comp)
    mx = int(round(box.w * margin))
    my = int(round(box.h * margin))
    x0 = max(box.x - mx, 0)
    y0 = max(box.y - my, 0)
    x1 = min(box.x + box.w + mx, w)
    y1 = min(box.y + box.h + my, h)
    grown = BBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)
    crop = source_img.pixels[grown.y:grown.y + grown.h,
                             grown.x:grown.x + grown.w]
    return grown, Image(crop.copy()), False
