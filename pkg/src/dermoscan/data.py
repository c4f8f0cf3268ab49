"""Samples, resizing, normalization and the on-disk dataset layout.

Dataset directory layout:
    images/<id>.ppm      color inputs (binary P6)
    masks/<id>.pgm       binary masks, 255 = lesion, 0 = background (P5)
    labels.csv           'id,label' header then one row per labeled sample
    meta.json            num_classes, seed, generator version
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .imageio import Image, read_ppm, write_ppm
from .rng import stable_key

STD_FLOOR = 1e-6


@dataclass
class Sample:
    image: Image
    mask: Optional[Image] = None
    label: Optional[int] = None
    id: str = ""

    def __post_init__(self):
        if self.mask is not None:
            if (self.mask.height, self.mask.width) != (self.image.height,
                                                       self.image.width):
                raise ValueError(f"{self.id}: mask {self.mask.height}x"
                                 f"{self.mask.width} does not match image "
                                 f"{self.image.height}x{self.image.width}")
            if self.mask.channels != 1 or not self.mask.is_binary():
                raise ValueError(f"{self.id}: mask must be single-channel binary")

    @property
    def mask_bool(self) -> Optional[np.ndarray]:
        if self.mask is None:
            return None
        return self.mask.pixels[:, :, 0] > 127


def resize_array_nn(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of any [H,W,...] array: output (i,j) samples
    source (floor(i*H/out_h), floor(j*W/out_w))."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {out_h}x{out_w}")
    h, w = arr.shape[:2]
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return arr[rows][:, cols]


def resize_nn(img: Image, out_h: int, out_w: int) -> Image:
    """Nearest-neighbor resize of an Image; binary masks stay binary."""
    return Image(resize_array_nn(img.pixels, out_h, out_w))


def standardize(img) -> np.ndarray:
    """[0,1] rescale then per-channel zero-mean / unit-std (std floored at
    1e-6, so constant images standardize to zeros).  Accepts an Image or an
    already-float [H,W,C] array."""
    v = img.as_float() if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    mean = v.mean(axis=(0, 1))
    std = v.std(axis=(0, 1))
    out = (v - mean) / np.maximum(std, STD_FLOOR)
    out[..., std < STD_FLOOR] = 0.0  # constant channel: zeros, not noise
    return out


def split_by_id(samples, val_fraction: float = 0.2):
    """Deterministic train/val split keyed on a stable hash of the id."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0,1)")
    cut = int(round(val_fraction * 100))
    train, val = [], []
    for s in samples:
        (val if stable_key(s.id) % 100 < cut else train).append(s)
    if not train or not val:
        raise ValueError(f"degenerate split: {len(train)} train / {len(val)} val "
                         f"samples; need more data")
    return train, val


# -- dataset directory I/O ----------------------------------------------------


def save_dataset(samples, out_dir, num_classes: int, seed: int,
                 generator_version: str = "none") -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        if not s.id:
            raise ValueError("samples need ids to be saved")
        write_ppm(s.image, out / "images" / f"{s.id}.ppm")
        if s.mask is not None:
            write_ppm(s.mask, out / "masks" / f"{s.id}.pgm")
        if s.label is not None:
            rows.append((s.id, s.label))
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        writer.writerows(rows)
    meta = {"num_classes": num_classes, "seed": seed,
            "generator_version": generator_version}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir):
    """Returns (samples sorted by id, meta dict)."""
    root = Path(data_dir)
    if not (root / "meta.json").exists():
        raise FileNotFoundError(f"{root}: not a dataset directory (no meta.json)")
    meta = json.loads((root / "meta.json").read_text())
    labels = {}
    labels_path = root / "labels.csv"
    if labels_path.exists():
        with open(labels_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["id", "label"]:
                raise ValueError(f"{labels_path}: expected 'id,label' header, "
                                 f"got {header}")
            for row in reader:
                if len(row) != 2:
                    raise ValueError(f"{labels_path}: malformed row {row}")
                labels[row[0]] = int(row[1])
    num_classes = int(meta.get("num_classes", 0))
    samples = []
    for img_path in sorted((root / "images").glob("*.ppm")):
        sid = img_path.stem
        mask_path = root / "masks" / f"{sid}.pgm"
        mask = read_ppm(mask_path) if mask_path.exists() else None
        label = labels.get(sid)
        if label is not None and num_classes and not 0 <= label < num_classes:
            raise ValueError(f"{sid}: label {label} out of range "
                             f"[0,{num_classes})")
        samples.append(Sample(image=read_ppm(img_path), mask=mask,
                              label=label, id=sid))
    if not samples:
        raise ValueError(f"{root}: dataset has no images")
    return samples, meta


def dataset_content_hash(data_dir) -> str:
    """SHA-256 over every file's name and bytes, in sorted order."""
    root = Path(data_dir)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def samples_content_hash(samples) -> str:
    """SHA-256 over in-memory samples (id, pixels, mask, label)."""
    digest = hashlib.sha256()
    for s in sorted(samples, key=lambda s: s.id):
        digest.update(s.id.encode())
        digest.update(s.image.pixels.tobytes())
        if s.mask is not None:
            digest.update(s.mask.pixels.tobytes())
        digest.update(str(s.label).encode())
    return digest.hexdigest()
