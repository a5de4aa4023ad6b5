"""Adapter-tuned frozen ViT segmentation on a float64 numpy autodiff engine."""

__version__ = "0.1.0"
