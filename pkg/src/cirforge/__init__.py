"""Composed-image-retrieval engine: mine triplets, train the fusion model, evaluate recall."""

__version__ = "0.1.0"
