"""reasdet: receptive-field attention detection toolkit.

A desk-scale, independently verifiable implementation of the numerical core
of a receptive-field-attention detector: attention convolution, multi-dilation
receptive-field enhancement, exponential channel attention, soft-NMS,
mAP@.50:.95 evaluation, and box-aware dataset augmentation.
"""

__version__ = "0.1.0"
