"""Export jobs: corpus captions (and optional images) to CIREMB01 stores.

Identical captions are encoded once and share one vector, so duplicate
captions under different ids come out bitwise identical.  Every store is
written with a JSON sidecar recording the model identifier and settings
for provenance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import DEFAULT_SENTENCE_MODEL, load_sentence_backend
from .store_format import (
    KIND_CAPTION,
    KIND_IMAGE,
    AdapterError,
    read_corpus,
    write_empty_store,
    write_store,
)

log = logging.getLogger("cirforge_adapter")

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")


@dataclass
class ExportJob:
    captions_path: str
    out_path: str
    model: str = DEFAULT_SENTENCE_MODEL
    batch_size: int = 32
    device: str | None = None
    dim: int | None = None  # explicit expected dim; mismatch is an error
    images_dir: str | None = None
    image_out_path: str | None = None
    extra_meta: dict = field(default_factory=dict)


def _encode_unique(backend, captions: list[str]) -> dict[str, np.ndarray]:
    unique = sorted(set(captions))
    matrix = backend.encode_text(unique)
    if matrix.ndim != 2 or matrix.shape[0] != len(unique):
        raise AdapterError(f"backend returned shape {matrix.shape} for {len(unique)} captions")
    return {caption: matrix[i] for i, caption in enumerate(unique)}


def _check_dim(job: ExportJob, dim: int):
    if job.dim is not None and dim != job.dim:
        raise AdapterError(f"model produced dim {dim}, but --dim {job.dim} was requested")


def _write_sidecar(store_path, job: ExportJob, dim: int, count: int, kind: str):
    meta = {
        "model": job.model,
        "dim": dim,
        "count": count,
        "kind": kind,
        "batch_size": job.batch_size,
    }
    meta.update(job.extra_meta)
    with open(str(store_path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def export_caption_embeddings(job: ExportJob, backend=None) -> int:
    """Embed every corpus caption into a caption-kind store; returns count."""
    records = read_corpus(job.captions_path)
    if not records:
        raise AdapterError(f"{job.captions_path}: corpus is empty")
    backend = backend or load_sentence_backend(job.model, job.device, job.batch_size)
    by_caption = _encode_unique(backend, [r.caption for r in records])
    entries = [(r.id, by_caption[r.caption]) for r in records]
    dim = write_store(job.out_path, KIND_CAPTION, entries)
    _check_dim(job, dim)
    _write_sidecar(job.out_path, job, dim, len(entries), "caption")
    log.info("wrote %d caption vectors (dim %d) to %s", len(entries), dim, job.out_path)
    return len(entries)


def _resolve_image(images_dir: Path, record) -> Path | None:
    for ext in IMAGE_EXTENSIONS:
        candidate = images_dir / f"{record.id}{ext}"
        if candidate.exists():
            return candidate
    return None


def export_global_image_text_features(job: ExportJob, backend=None) -> tuple[int, int]:
    """Paired global features: an image-kind store and a caption-kind store.

    Images are looked up as <images_dir>/<id>.<jpg|jpeg|png>; unresolvable
    ids are logged and omitted from the image store.  Returns
    (image count, caption count).
    """
    if job.images_dir is None or job.image_out_path is None:
        raise AdapterError("image export needs images_dir and image_out_path")
    records = read_corpus(job.captions_path)
    if not records:
        raise AdapterError(f"{job.captions_path}: corpus is empty")
    if backend is None:
        from .backends import load_clip_backend
        backend = load_clip_backend(job.model, job.device, job.batch_size)

    by_caption = _encode_unique(backend, [r.caption for r in records])
    text_entries = [(r.id, by_caption[r.caption]) for r in records]
    text_dim = write_store(job.out_path, KIND_CAPTION, text_entries)
    _check_dim(job, text_dim)
    _write_sidecar(job.out_path, job, text_dim, len(text_entries), "caption")

    images_dir = Path(job.images_dir)
    resolved = []
    for record in records:
        path = _resolve_image(images_dir, record)
        if path is None:
            log.warning("no image file for id %d under %s; skipped", record.id, images_dir)
            continue
        resolved.append((record.id, path))
    if resolved:
        matrix = backend.encode_image([p for _, p in resolved])
        if matrix.shape[0] != len(resolved):
            raise AdapterError(f"backend returned {matrix.shape[0]} rows for {len(resolved)} images")
        image_dim = write_store(job.image_out_path, KIND_IMAGE,
                                [(id_, matrix[i]) for i, (id_, _) in enumerate(resolved)])
    else:
        image_dim = text_dim
        write_empty_store(job.image_out_path, KIND_IMAGE, image_dim)
    if image_dim != text_dim:
        raise AdapterError(f"paired stores disagree in dim: image {image_dim} vs text {text_dim}")
    _write_sidecar(job.image_out_path, job, image_dim, len(resolved), "image")
    log.info("wrote %d image vectors and %d caption vectors (dim %d)",
             len(resolved), len(text_entries), text_dim)
    return len(resolved), len(text_entries)
