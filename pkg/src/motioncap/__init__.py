"""Hierarchical motion captioning with retrieval from a dynamic caption database."""

__version__ = "0.1.0"
