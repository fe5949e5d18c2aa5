"""Export real encoder embeddings into the retrieval engine's store format."""

__version__ = "0.1.0"
