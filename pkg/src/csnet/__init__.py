"""Conditional similarity embeddings: masked triplet metric learning."""

__version__ = "0.1.0"
