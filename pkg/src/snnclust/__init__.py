"""Clustering-friendly autoencoder codes via the soft nearest neighbour loss."""

__version__ = "0.1.0"
