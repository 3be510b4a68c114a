"""Few-shot Siamese metric learning for imbalanced binary image classification."""

__version__ = "0.1.0"
