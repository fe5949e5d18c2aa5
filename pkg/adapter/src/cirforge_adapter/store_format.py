"""The engine's wire formats, implemented against their documented layout.

This package talks to the retrieval engine only through files, so the
corpus JSON-lines format and the CIREMB01 binary store are re-implemented
here from their specification:

    bytes 0-7    magic ASCII "CIREMB01"
    bytes 8-11   uint32 dim            (little-endian)
    bytes 12-15  uint32 kind           (0 = caption, 1 = image)
    bytes 16-23  uint64 record count
    records      uint64 id + dim float32 values each

Vectors must be unit-norm; this writer normalizes in float64 before the
float32 cast so the engine's 1e-4 norm validation always passes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CIREMB01"
KIND_CAPTION = 0
KIND_IMAGE = 1
_HEADER = struct.Struct("<8sIIQ")


class AdapterError(Exception):
    """Validation failure in adapter inputs or outputs."""

    exit_code = 2


@dataclass(frozen=True)
class CorpusRecord:
    id: int
    caption: str
    source_url: str | None = None


def read_corpus(path) -> list[CorpusRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}:{line_number}: malformed JSON: {exc.msg}") from exc
            if "id" not in obj or "caption" not in obj:
                raise AdapterError(f"{path}:{line_number}: missing 'id' or 'caption'")
            id_ = obj["id"]
            caption = obj["caption"]
            if not isinstance(id_, int) or isinstance(id_, bool) or id_ < 0:
                raise AdapterError(f"{path}:{line_number}: bad id {id_!r}")
            if not isinstance(caption, str) or not caption.strip():
                raise AdapterError(f"{path}:{line_number}: empty caption")
            if id_ in seen:
                raise AdapterError(f"{path}:{line_number}: duplicate id {id_}")
            seen.add(id_)
            records.append(CorpusRecord(id_, caption, obj.get("source_url")))
    return records


def write_store(path, kind: int, entries: list[tuple[int, np.ndarray]]) -> int:
    """Write (id, vector) pairs as a CIREMB01 store; returns the dimension.

    Vectors are L2-normalized here; zero vectors are rejected.
    """
    if kind not in (KIND_CAPTION, KIND_IMAGE):
        raise AdapterError(f"kind must be 0 or 1, got {kind}")
    dim = None
    rows = []
    for id_, vec in entries:
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise AdapterError(f"id {id_}: dim {vec.shape[0]} != {dim}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise AdapterError(f"id {id_}: zero-norm embedding")
        rows.append((int(id_), (vec / norm).astype("<f4")))
    if dim is None:
        raise AdapterError("cannot write an empty store without a dimension")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, dim, kind, len(rows)))
        for id_, vec in rows:
            fh.write(struct.pack("<Q", id_))
            fh.write(vec.tobytes())
    return dim


def write_empty_store(path, kind: int, dim: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, dim, kind, 0))


def read_store(path) -> tuple[int, int, list[tuple[int, np.ndarray]]]:
    """(dim, kind, entries) — used for the adapter's own round-trip checks."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, dim, kind, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise AdapterError(f"{path}: bad magic {magic!r}")
        entries = []
        for _ in range(count):
            (id_,) = struct.unpack("<Q", fh.read(8))
            vec = np.frombuffer(fh.read(4 * dim), dtype="<f4").copy()
            entries.append((id_, vec))
    return dim, kind, entries
