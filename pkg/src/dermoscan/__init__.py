"""dermoscan: concurrent skin-lesion detection and recognition.

A self-contained dual-encoder convolutional network (segmentation decoder +
three averaged classification heads) with its own float64 autodiff core,
training loop, evaluation suite, binary weight format, CLI and HTTP
inference service.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, no_grad, backward, grad_check  # noqa: F401
