"""Desk-scale multimodal object-entity relation extraction lab.

A from-scratch float64 tensor core with taped reverse-mode
differentiation, a marker-wrapped text encoder, an RGB-D patch
encoder, a prefix-and-correlation fusion stack with a position-fused
classification head, a calibrated synthetic corpus generator, and the
matching training/evaluation suite.
"""

from ._kernels import BACKEND as kernel_backend  # noqa: F401
from .tensor import Tape, Tensor, grad_check  # noqa: F401

__version__ = "0.1.0"
