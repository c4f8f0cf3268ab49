"""Run-length encoding of binary masks.

Row-major, alternating zero/one run lengths, first run counts zeros (so a
mask starting with 1 begins with an explicit 0).  Runs always sum to H*W.
"""

from __future__ import annotations

import numpy as np


def rle_encode(mask) -> list:
    flat = np.asarray(mask).reshape(-1).astype(bool)
    if flat.size == 0:
        raise ValueError("empty mask")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs, h: int, w: int) -> np.ndarray:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    if sum(runs) != h * w:
        raise ValueError(f"runs sum to {sum(runs)}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value:
            flat[pos:pos + r] = True
        pos += r
        value = not value
    return flat.reshape(h, w)
