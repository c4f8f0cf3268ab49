"""Synthetic dermoscopy-like dataset generator.

Each image is a textured skin background with exactly one lesion blob whose
rasterization IS the ground-truth mask.  Appearance is class-determined:

  class 0          smooth, roundish, warm brown (nevus-like)
  class 1 (C=3)    flat tan blob with a scaly speckle texture (keratosis-like)
  last class       irregular dark multi-hue blob (melanoma-like)

Optional hair curves and a ruler line are drawn over the image (never into
the mask).  Everything is driven by per-sample generators derived from the
dataset seed, so the same (n, num_classes, seed) reproduces every byte.
"""

from __future__ import annotations

import numpy as np

from .data import Sample
from .imageio import Image
from .rng import derive_rng

GENERATOR_VERSION = "1"

MIN_AREA_FRAC = 0.02
MAX_AREA_FRAC = 0.60


def _background(rng, h, w):
    base = np.array([rng.uniform(0.70, 0.85),
                     rng.uniform(0.52, 0.68),
                     rng.uniform(0.42, 0.58)])
    img = np.broadcast_to(base, (h, w, 3)).copy()
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w),
                         indexing="ij")
    for _ in range(3):
        amp = rng.uniform(0.01, 0.03)
        fy, fx = rng.uniform(1.0, 6.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[..., None]
    img += rng.normal(0.0, 0.008, size=(h, w, 1))
    return np.clip(img, 0.0, 1.0)


def _lesion_mask(rng, h, w, irregularity):
    """Deformed-ellipse indicator; returns (mask bool, geometry draws)."""
    while True:
        cy = rng.uniform(0.3, 0.7) * h
        cx = rng.uniform(0.3, 0.7) * w
        area_frac = rng.uniform(0.05, 0.30)
        r0 = np.sqrt(area_frac * h * w / np.pi)
        squash = rng.uniform(0.75, 1.3)
        ry, rx = r0 * squash, r0 / squash
        tilt = rng.uniform(0, np.pi)
        n_modes = 5
        amps = rng.uniform(0, irregularity, size=n_modes)
        phases = rng.uniform(0, 2 * np.pi, size=n_modes)

        yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx,
                             indexing="ij")
        u = yy * np.cos(tilt) + xx * np.sin(tilt)
        v = -yy * np.sin(tilt) + xx * np.cos(tilt)
        dist = np.sqrt((u / ry) ** 2 + (v / rx) ** 2)
        theta = np.arctan2(u, v)
        rho = np.ones_like(theta)
        for k in range(n_modes):
            rho += amps[k] * np.cos((k + 2) * theta + phases[k])
        mask = dist <= rho
        frac = mask.mean()
        if MIN_AREA_FRAC <= frac <= MAX_AREA_FRAC:
            return mask, (cy, cx, r0)


def _paint_nevus(rng, img, mask, dist_field):
    color = np.array([rng.uniform(0.45, 0.60),
                      rng.uniform(0.28, 0.40),
                      rng.uniform(0.18, 0.30)])
    shade = 1.0 - 0.25 * np.clip(1.0 - dist_field, 0, 1)  # darker center
    lesion = color[None, None, :] * shade[..., None]
    img[mask] = 0.92 * lesion[mask] + 0.08 * img[mask]


def _paint_keratosis(rng, img, mask, dist_field):
    # distinctly yellow-tan (low blue) so the class is separable from both
    # the skin background and the brown nevus class
    color = np.array([rng.uniform(0.78, 0.88),
                      rng.uniform(0.64, 0.74),
                      rng.uniform(0.28, 0.38)])
    h, w = mask.shape
    speckle = rng.uniform(-1.0, 1.0, size=(h, w))
    scale = rng.uniform(0.14, 0.22)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    scales = np.sin(yy * rng.uniform(0.8, 1.6)) * np.sin(xx * rng.uniform(0.8, 1.6))
    texture = 1.0 + scale * (0.6 * speckle + 0.4 * scales)
    lesion = color[None, None, :] * texture[..., None]
    img[mask] = np.clip(0.92 * lesion[mask] + 0.08 * img[mask], 0, 1)


def _paint_melanoma(rng, img, mask, dist_field):
    base = np.array([rng.uniform(0.18, 0.30),
                     rng.uniform(0.10, 0.20),
                     rng.uniform(0.08, 0.18)])
    h, w = mask.shape
    lesion = np.broadcast_to(base, (h, w, 3)).copy()
    rows, cols = np.nonzero(mask)
    for _ in range(rng.integers(2, 5)):  # dark/bluish patches inside
        i = rng.integers(0, len(rows))
        py, px = rows[i], cols[i]
        pr = rng.uniform(0.15, 0.4) * np.sqrt(mask.sum() / np.pi)
        hue = np.array([rng.uniform(0.05, 0.45),
                        rng.uniform(0.05, 0.35),
                        rng.uniform(0.10, 0.50)])
        yy, xx = np.meshgrid(np.arange(h) - py, np.arange(w) - px,
                             indexing="ij")
        patch = (yy ** 2 + xx ** 2) <= pr ** 2
        lesion[patch] = hue
    lesion += rng.normal(0, 0.02, size=(h, w, 1))
    img[mask] = np.clip(0.95 * lesion[mask] + 0.05 * img[mask], 0, 1)


def _draw_hair(rng, img):
    h, w = img.shape[:2]
    color = np.array([rng.uniform(0.05, 0.15)] * 3) * np.array([1.0, 0.85, 0.6])
    for _ in range(rng.integers(2, 6)):
        p0 = rng.uniform([0, 0], [h - 1, w - 1])
        p1 = rng.uniform([0, 0], [h - 1, w - 1])
        p2 = rng.uniform([0, 0], [h - 1, w - 1])
        t = np.linspace(0, 1, 4 * max(h, w))[:, None]
        pts = ((1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2)
        r = np.clip(np.rint(pts[:, 0]).astype(int), 0, h - 1)
        c = np.clip(np.rint(pts[:, 1]).astype(int), 0, w - 1)
        img[r, c] = 0.3 * img[r, c] + 0.7 * color


def _draw_ruler(rng, img):
    h, w = img.shape[:2]
    color = np.full(3, rng.uniform(0.15, 0.3))
    horizontal = rng.random() < 0.5
    if horizontal:
        row = int(rng.uniform(0.1, 0.9) * h)
        img[row, :, :] = color
        for c in range(0, w, max(w // 20, 4)):
            top = max(row - 3, 0)
            img[top:row, c, :] = color
    else:
        col = int(rng.uniform(0.1, 0.9) * w)
        img[:, col, :] = color
        for r in range(0, h, max(h // 20, 4)):
            left = max(col - 3, 0)
            img[r, left:col, :] = color


def make_sample(sample_seed, label: int, num_classes: int, hw,
                sample_id: str, artifacts: bool = True) -> Sample:
    rng = derive_rng(0, sample_seed) if isinstance(sample_seed, int) else sample_seed
    h, w = hw
    img = _background(rng, h, w)

    melanoma_class = num_classes - 1
    irregularity = 0.18 if label == melanoma_class else 0.05
    mask, (cy, cx, r0) = _lesion_mask(rng, h, w, irregularity)
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    dist_field = np.sqrt(yy ** 2 + xx ** 2) / max(r0, 1.0)

    if label == melanoma_class:
        _paint_melanoma(rng, img, mask, dist_field)
    elif label == 0:
        _paint_nevus(rng, img, mask, dist_field)
    else:
        _paint_keratosis(rng, img, mask, dist_field)

    if artifacts:
        if rng.random() < 0.5:
            _draw_hair(rng, img)
        if rng.random() < 0.3:
            _draw_ruler(rng, img)

    mask_img = Image((mask.astype(np.uint8) * 255)[:, :, None])
    return Sample(image=Image.from_float(img), mask=mask_img,
                  label=label, id=sample_id)


def gen_synthetic(n: int, num_classes: int, seed: int, hw=(192, 256),
                  class_counts=None, artifacts: bool = True):
    """Generate n samples; labels cycle through the classes unless explicit
    per-class counts are given."""
    if num_classes not in (2, 3):
        raise ValueError(f"num_classes must be 2 or 3, got {num_classes}")
    if class_counts is not None:
        if len(class_counts) != num_classes or any(c < 0 for c in class_counts):
            raise ValueError(f"bad class_counts {class_counts}")
        if sum(class_counts) != n:
            raise ValueError(f"class_counts {class_counts} do not sum to n={n}")
        labels = [c for c, k in enumerate(class_counts) for _ in range(k)]
    else:
        labels = [i % num_classes for i in range(n)]
    if n < 1:
        raise ValueError("n must be >= 1")
    samples = []
    for i, label in enumerate(labels):
        rng = derive_rng(seed, "sample", i)
        samples.append(make_sample(rng, label, num_classes, hw,
                                   sample_id=f"syn{i:05d}", artifacts=artifacts))
    return samples
