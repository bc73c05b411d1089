"""Latent diffusion reconstruction with feature editing for anomaly detection."""

__version__ = "0.1.0"
