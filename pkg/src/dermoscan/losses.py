"""Training losses and class weighting.

Segmentation uses a combined objective: (1 - soft IoU) plus pixel-wise
binary cross-entropy, computed on probabilities clipped to
[eps, 1 - eps] with eps = 1e-7 so the logarithms and the IoU ratio stay
bounded.  Recognition uses weighted categorical cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, clip, log, mul, tmean, tsum

EPSILON = 1e-7


@dataclass
class PixelPair:
    """Ground-truth mask (binary) and predicted probabilities, same shape."""

    y: Tensor
    y_hat: Tensor

    def __post_init__(self):
        if not isinstance(self.y, Tensor):
            self.y = Tensor(self.y)
        if not isinstance(self.y_hat, Tensor):
            raise TypeError("y_hat must be a Tensor (differentiable input)")
        if self.y.shape != self.y_hat.shape:
            raise ValueError(f"mask shapes differ: {self.y.shape} "
                             f"vs {self.y_hat.shape}")
        if not np.isin(self.y.data, (0.0, 1.0)).all():
            raise ValueError("ground-truth mask must be binary (0/1)")

    @property
    def pixel_count(self) -> int:
        return self.y.size


def soft_iou(pair: PixelPair) -> Tensor:
    """Differentiable intersection-over-union on clipped probabilities;
    depends on pixel sums only, so it is permutation-invariant."""
    y = pair.y
    yc = clip(pair.y_hat, EPSILON, 1.0 - EPSILON)
    inter = tsum(mul(y, yc))
    return inter / (tsum(y) + tsum(yc) - inter)


def combined_loss(pair: PixelPair) -> Tensor:
    """(1 - soft IoU) + BCE over all pixels of the pair; always >= 0 and
    ~0 only for a (clipped) perfect prediction."""
    y = pair.y
    yc = clip(pair.y_hat, EPSILON, 1.0 - EPSILON)
    bce = -tmean(mul(y, log(yc)) + mul(1.0 - y, log(1.0 - yc)))
    return (1.0 - soft_iou(pair)) + bce


@dataclass
class ClassWeights:
    """Per-class loss weights.

    ``proportional`` uses W_i = N_i / N (weights sum to 1, favouring the
    majority class); ``inverse-frequency`` uses W_i = N / (C * N_i), the
    conventional rebalancing that upweights minority classes.  The latter is
    the default everywhere in this package.
    """

    weights: np.ndarray
    mode: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights <= 0):
            raise ValueError("class weights must be positive")

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassWeights":
        return cls(np.ones(num_classes), "uniform")

    def __getitem__(self, i: int) -> float:
        return float(self.weights[i])


def class_weights(counts, mode: str = "inverse-frequency") -> ClassWeights:
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError(f"every class needs at least one sample, got {counts}")
    n = counts.sum()
    if mode == "proportional":
        w = counts / n
    elif mode == "inverse-frequency":
        w = n / (len(counts) * counts)
    elif mode == "uniform":
        w = np.ones(len(counts))
    else:
        raise ValueError(f"unknown class-weight mode {mode!r}")
    return ClassWeights(w, mode)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels must be ints in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def weighted_categorical_crossentropy(probs: Tensor, labels_onehot,
                                      weights: ClassWeights) -> Tensor:
    """-(1/B) * sum_b w[class(b)] * log probs[b, class(b)]."""
    onehot = np.asarray(labels_onehot.data if isinstance(labels_onehot, Tensor)
                        else labels_onehot, dtype=np.float64)
    if probs.ndim != 2 or onehot.shape != probs.shape:
        raise ValueError(f"probs {probs.shape} vs one-hot {onehot.shape}")
    rows_ok = (np.isin(onehot, (0.0, 1.0)).all()
               and np.array_equal(onehot.sum(axis=1), np.ones(len(onehot))))
    if not rows_ok:
        raise ValueError("labels must be one-hot rows")
    if len(weights.weights) != probs.shape[1]:
        raise ValueError("weight vector length does not match class count")
    per_sample_w = onehot @ weights.weights  # [B]
    picked = tsum(mul(clip(probs, EPSILON, 1.0), Tensor(onehot)), axes=1)
    return -tmean(mul(log(picked), Tensor(per_sample_w)))
