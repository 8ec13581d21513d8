"""Concurrent misclassification and out-of-distribution detection for
semantic segmentation.

A small conditional 2D normalizing flow is trained on the energy scores of a
frozen segmentation model. Its two mixture components (correct vs. deviating
pixels) yield a per-pixel posterior used as an uncertainty score that covers
both in-distribution mistakes and out-of-distribution content with a single
model.
"""

from .estimator import FlowEneDetector

__version__ = "0.1.0"

__all__ = ["FlowEneDetector", "__version__"]
