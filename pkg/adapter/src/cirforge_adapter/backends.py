"""Embedding backends: sentence-transformers for captions, CLIP for pairs.

Heavy libraries are imported lazily so the adapter stays importable (and
its format logic testable) on machines without model weights.  Any backend
is just an object with encode_text(list[str]) -> (n, d) float array, plus
encode_image(list[path]) for image-capable ones.
"""

from __future__ import annotations

import logging

import numpy as np

from .store_format import AdapterError

log = logging.getLogger("cirforge_adapter")

DEFAULT_SENTENCE_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_CLIP_MODEL = "openai/clip-vit-base-patch32"


class SentenceTransformerBackend:
    """Caption embeddings through a sentence-transformers checkpoint."""

    def __init__(self, model_name: str = DEFAULT_SENTENCE_MODEL,
                 device: str | None = None, batch_size: int = 32):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise AdapterError(f"sentence-transformers is not installed: {exc}") from exc
        try:
            self._model = SentenceTransformer(model_name, device=device)
        except Exception as exc:
            raise AdapterError(f"could not load model {model_name!r}: {exc}") from exc
        self.model_name = model_name
        self.batch_size = batch_size

    def encode_text(self, texts: list[str]) -> np.ndarray:
        out = self._model.encode(
            list(texts), batch_size=self.batch_size,
            convert_to_numpy=True, show_progress_bar=False,
        )
        return np.asarray(out, dtype=np.float64)


class ClipBackend:
    """Paired global image/text features through a CLIP checkpoint."""

    def __init__(self, model_name: str = DEFAULT_CLIP_MODEL,
                 device: str | None = None, batch_size: int = 16):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise AdapterError(f"transformers/torch are not installed: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_name)
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise AdapterError(f"could not load model {model_name!r}: {exc}") from exc
        self._torch = torch
        self._device = device or "cpu"
        self._model.to(self._device)
        self._model.eval()
        self.model_name = model_name
        self.batch_size = batch_size

    def encode_text(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = list(texts[start:start + self.batch_size])
                inputs = self._processor(text=batch, return_tensors="pt",
                                         padding=True, truncation=True)
                inputs = {k: v.to(self._device) for k, v in inputs.items()}
                chunks.append(self._model.get_text_features(**inputs).cpu().numpy())
        return np.concatenate(chunks, axis=0).astype(np.float64)

    def encode_image(self, paths: list) -> np.ndarray:
        try:
            from PIL import Image
        except ImportError as exc:
            raise AdapterError(f"pillow is not installed: {exc}") from exc
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for start in range(0, len(paths), self.batch_size):
                images = [Image.open(p).convert("RGB") for p in paths[start:start + self.batch_size]]
                inputs = self._processor(images=images, return_tensors="pt")
                inputs = {k: v.to(self._device) for k, v in inputs.items()}
                chunks.append(self._model.get_image_features(**inputs).cpu().numpy())
        return np.concatenate(chunks, axis=0).astype(np.float64)


def load_sentence_backend(model_name: str, device: str | None, batch_size: int):
    return SentenceTransformerBackend(model_name, device, batch_size)


def load_clip_backend(model_name: str, device: str | None, batch_size: int):
    return ClipBackend(model_name, device, batch_size)
