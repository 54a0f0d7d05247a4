"""Textual relation embeddings trained on global co-occurrence statistics."""

__version__ = "0.1.0"
