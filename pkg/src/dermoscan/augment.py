"""Geometric and intensity augmentation, plus class rebalancing.

Geometry (flip / rotate / shift / zoom) is applied identically to the image
and its mask via a single inverse-mapped nearest-neighbor resampling with
zero padding; intensity corrections (gamma, logarithmic, sigmoid, percentile
contrast stretch) touch the image only.  Every draw comes from the caller's
seeded generator, so a fixed seed reproduces the transform bit-for-bit.

Rotation is counter-clockwise: at 90 degrees pixel (0,0) of a 2x2 image
lands at (1,0), matching numpy.rot90.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Sample
from .imageio import Image
from .rng import derive_rng, make_rng


@dataclass
class AugmentationSpec:
    rotation_deg: float = 30.0        # angle drawn from [-r, r]
    flip_horizontal: bool = True      # each flip applied with prob 0.5
    flip_vertical: bool = True
    shift_frac: float = 0.10          # of each dimension, drawn per axis
    zoom_range: tuple = (0.9, 1.1)
    gamma_range: tuple = (0.7, 1.5)
    log_correction: bool = True       # log(1 + a*v) / log(1 + a)
    sigmoid_correction: bool = True   # 1 / (1 + exp(-k (v - c)))
    contrast_stretch: bool = True     # percentile stretch toggle
    contrast_percentiles: tuple = (2.0, 98.0)
    intensity_prob: float = 0.5       # chance of applying each intensity op

    def __post_init__(self):
        if self.rotation_deg < 0 or self.shift_frac < 0:
            raise ValueError("rotation/shift ranges must be >= 0")
        if not (0 < self.zoom_range[0] <= self.zoom_range[1]):
            raise ValueError(f"bad zoom range {self.zoom_range}")
        if not (0 < self.gamma_range[0] <= self.gamma_range[1]):
            raise ValueError(f"bad gamma range {self.gamma_range}")
        lo, hi = self.contrast_percentiles
        if not (0 <= lo < hi <= 100):
            raise ValueError(f"bad contrast percentiles {self.contrast_percentiles}")
        if not 0.0 <= self.intensity_prob <= 1.0:
            raise ValueError("intensity_prob must be in [0,1]")

    @classmethod
    def geometry_only(cls) -> "AugmentationSpec":
        return cls(log_correction=False, sigmoid_correction=False,
                   contrast_stretch=False, gamma_range=(1.0, 1.0),
                   intensity_prob=0.0)


@dataclass
class GeometryDraw:
    """One sampled geometric transform (kept explicit for testability)."""

    angle_deg: float = 0.0
    flip_h: bool = False
    flip_v: bool = False
    shift_rows: float = 0.0
    shift_cols: float = 0.0
    zoom: float = 1.0

    @property
    def is_identity(self) -> bool:
        return (self.angle_deg == 0.0 and not self.flip_h and not self.flip_v
                and self.shift_rows == 0.0 and self.shift_cols == 0.0
                and self.zoom == 1.0)


def draw_geometry(spec: AugmentationSpec, rng, shape) -> GeometryDraw:
    h, w = shape
    return GeometryDraw(
        angle_deg=float(rng.uniform(-spec.rotation_deg, spec.rotation_deg)),
        flip_h=bool(spec.flip_horizontal and rng.random() < 0.5),
        flip_v=bool(spec.flip_vertical and rng.random() < 0.5),
        shift_rows=float(rng.uniform(-spec.shift_frac, spec.shift_frac) * h),
        shift_cols=float(rng.uniform(-spec.shift_frac, spec.shift_frac) * w),
        zoom=float(rng.uniform(*spec.zoom_range)),
    )


def apply_geometry(pixels: np.ndarray, draw: GeometryDraw) -> np.ndarray:
    """Inverse-map nearest-neighbor warp with zero padding, any channel count."""
    if draw.is_identity:
        return pixels.copy()
    h, w = pixels.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr = rr - cy - draw.shift_rows
    dc = cc - cx - draw.shift_cols
    theta = np.deg2rad(draw.angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # inverse rotation (forward is counter-clockwise)
    sr = dr * cos_t + dc * sin_t
    sc = -dr * sin_t + dc * cos_t
    sr /= draw.zoom
    sc /= draw.zoom
    if draw.flip_h:
        sc = -sc
    if draw.flip_v:
        sr = -sr
    src_r = np.rint(sr + cy).astype(np.int64)
    src_c = np.rint(sc + cx).astype(np.int64)
    inside = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.zeros_like(pixels)
    out[inside] = pixels[src_r[inside], src_c[inside]]
    return out


def _gamma(v, g):
    return np.power(v, g)


def _log_correct(v, a):
    return np.log1p(a * v) / np.log1p(a)


def _sigmoid_correct(v, k, c):
    return 1.0 / (1.0 + np.exp(-k * (v - c)))


def _contrast_stretch(v, lo_pct, hi_pct):
    lo = np.percentile(v, lo_pct)
    hi = np.percentile(v, hi_pct)
    if hi - lo < 1e-9:
        return v
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def apply_intensity(float_img: np.ndarray, spec: AugmentationSpec, rng) -> np.ndarray:
    """Intensity corrections on a [0,1] float image.  Each enabled op fires
    with spec.intensity_prob; draws happen unconditionally so the stream
    stays aligned regardless of which ops fire."""
    v = float_img
    g = rng.uniform(*spec.gamma_range)
    if rng.random() < spec.intensity_prob:
        v = _gamma(v, g)
    a = rng.uniform(1.0, 10.0)
    if spec.log_correction and rng.random() < spec.intensity_prob:
        v = _log_correct(v, a)
    k = rng.uniform(5.0, 15.0)
    c = rng.uniform(0.4, 0.6)
    if spec.sigmoid_correction and rng.random() < spec.intensity_prob:
        v = _sigmoid_correct(v, k, c)
    if spec.contrast_stretch and rng.random() < spec.intensity_prob:
        v = _contrast_stretch(v, *spec.contrast_percentiles)
    return v


def augment(sample: Sample, spec: AugmentationSpec, rng) -> Sample:
    """Augmented copy of the sample (same id; callers rename duplicates)."""
    gen = make_rng(rng)
    draw = draw_geometry(spec, gen, (sample.image.height, sample.image.width))
    img_px = apply_geometry(sample.image.pixels, draw)
    v = apply_intensity(img_px.astype(np.float64) / 255.0, spec, gen)
    new_img = Image.from_float(v)
    new_mask = None
    if sample.mask is not None:
        new_mask = Image(apply_geometry(sample.mask.pixels, draw))
    return Sample(image=new_img, mask=new_mask, label=sample.label, id=sample.id)


def rebalance(samples, targets, spec: Optional[AugmentationSpec] = None,
              seed: int = 0):
    """Deterministic cyclic oversampling to per-class targets.

    Originals are kept byte-identical; each duplicate is an augmented copy
    with its own derived seed and an id suffix '-dupK'.  Targets must be >=
    the current counts.
    """
    spec = spec or AugmentationSpec()
    by_class: dict = {}
    for s in samples:
        if s.label is None:
            raise ValueError(f"{s.id}: rebalance needs labeled samples")
        by_class.setdefault(s.label, []).append(s)
    out = list(samples)
    for cls, target in sorted(targets.items()):
        pool = by_class.get(cls, [])
        if not pool:
            raise ValueError(f"class {cls} has no samples to oversample")
        if target < len(pool):
            raise ValueError(f"class {cls}: target {target} below current "
                             f"count {len(pool)}")
        for k in range(target - len(pool)):
            base = pool[k % len(pool)]
            dup = augment(base, spec, derive_rng(seed, "rebalance", base.id, k))
            out.append(replace(dup, id=f"{base.id}-dup{k}"))
    return out
