"""Unsupervised clustering with a vector-quantized autoencoder and an information-maximizing head."""

__version__ = "0.1.0"
