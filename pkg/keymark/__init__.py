"""
keymark: integrity watermarks for small feed-forward classifiers.

A secret Key dataset of random samples is embedded into a trained model;
the model's accuracy on that key later tells whether it is still the
model that was watermarked, even after further training on newer data.
"""

from .config import CHECKPOINT_FORMAT_VERSION, KEY_FORMAT_VERSION, REPORT_FORMAT_VERSION

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CHECKPOINT_FORMAT_VERSION",
    "KEY_FORMAT_VERSION",
    "REPORT_FORMAT_VERSION",
]
