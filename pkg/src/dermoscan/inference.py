"""Single-image inference shared by the CLI and the HTTP service.

Input images are resized to the detection resolution for the forward pass;
masks and boxes are mapped back to the original pixel grid before leaving
this layer.
"""

from __future__ import annotations

import numpy as np

from .data import resize_array_nn, resize_nn, standardize
from .imageio import Image
from .network import DermoNet
from .rle import rle_encode
from .roi import extract_roi
from .tensor import Tensor, no_grad, sigmoid
from .train import predict_class_probs


def predict_single(seg_net: DermoNet, cls_net: DermoNet, image: Image,
                   threshold: float = 0.5) -> dict:
    """Returns the wire-format prediction payload (sans model_version):
    per-class probabilities, bbox and RLE mask in original coordinates."""
    if image.channels == 1:
        image = Image(np.repeat(image.pixels, 3, axis=2))
    seg_net.set_mode("eval")
    hw = seg_net.config.input_hw_detection
    x = standardize(resize_nn(image, *hw))[None]
    with no_grad():
        probs = sigmoid(seg_net.mask_logits(Tensor(x))).data[0, :, :, 0]
    full_probs = resize_array_nn(probs, image.height, image.width)
    bbox, crop, degenerate = extract_roi(full_probs, image, threshold)

    cls_probs = predict_class_probs(cls_net, [crop])[0]
    names = cls_net.config.class_names
    mask_bool = full_probs >= threshold
    return {
        "classes": [{"label": names[i], "probability": float(cls_probs[i])}
                    for i in range(len(names))],
        "bbox": bbox.as_dict(),
        "mask": {"dims": [image.height, image.width],
                 "rle": rle_encode(mask_bool)},
        "degenerate_mask": bool(degenerate),
    }


def top_class(payload: dict) -> dict:
    return max(payload["classes"], key=lambda c: c["probability"])
