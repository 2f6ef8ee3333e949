"""Reconstruction-based anomaly detection in EELS spectrum images with a 3D convolutional VAE."""

__version__ = "0.1.0"
