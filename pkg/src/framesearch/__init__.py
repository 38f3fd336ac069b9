"""Latent-space frame compression and retrieval."""

__version__ = "0.1.0"
