"""Differentiable JPEG layer with a soft quantizer, for end-to-end training of quantization tables."""

__version__ = "0.1.0"
