"""Caption corpora and the bit-exact binary embedding store.

Wire format (all little-endian):

    bytes 0-7    magic ASCII "CIREMB01"
    bytes 8-11   uint32 dim
    bytes 12-15  uint32 kind (0 = caption, 1 = image)
    bytes 16-23  uint64 count
    then count records, each: uint64 id + dim float32 values

Captions live in a sidecar JSON-lines corpus file, never in the binary
store, so vector scans stay string-free.  Every stored vector must be
unit-norm within NORM_TOLERANCE.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .chunker import tokenize
from .errors import CorpusParseError, FormatError, ValidationError
from .rng import HashRng

MAGIC = b"CIREMB01"
KIND_CAPTION = 0
KIND_IMAGE = 1
KIND_NAMES = {KIND_CAPTION: "caption", KIND_IMAGE: "image"}
NORM_TOLERANCE = 1e-4
_HEADER = struct.Struct("<8sIIQ")

_MAX_ID = (1 << 64) - 1


@dataclass(frozen=True)
class ImageRecord:
    id: int
    caption: str
    source_url: str | None = None


class EmbeddingStore:
    """Immutable id -> unit-norm float32 vector map of a fixed dimension."""

    def __init__(self, dim: int, kind: int, ids: np.ndarray, vectors: np.ndarray):
        self.dim = int(dim)
        self.kind = int(kind)
        self._ids = ids
        self._vectors = vectors
        self._row_of = {int(i): r for r, i in enumerate(ids)}

    @classmethod
    def from_entries(cls, dim: int, kind: int, entries) -> "EmbeddingStore":
        """Build from (id, vector) pairs, validating the store invariants."""
        if dim < 1:
            raise ValidationError(f"dim must be positive, got {dim}")
        if kind not in KIND_NAMES:
            raise ValidationError(f"kind must be 0 (caption) or 1 (image), got {kind}")
        ids, rows = [], []
        for id_, vec in entries:
            id_ = int(id_)
            if not 0 <= id_ <= _MAX_ID:
                raise ValidationError(f"id {id_} outside unsigned 64-bit range")
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (dim,):
                raise ValidationError(f"id {id_}: vector shape {vec.shape} != ({dim},)")
            ids.append(id_)
            rows.append(vec)
        ids_arr = np.array(ids, dtype=np.uint64)
        if len(set(ids)) != len(ids):
            seen = set()
            for i in ids:
                if i in seen:
                    raise ValidationError(f"duplicate id {i} in store")
                seen.add(i)
        vecs = np.vstack(rows) if rows else np.empty((0, dim), dtype=np.float32)
        store = cls(dim, kind, ids_arr, vecs)
        store._check_norms()
        return store

    def _check_norms(self):
        if len(self) == 0:
            return
        norms = np.linalg.norm(self._vectors.astype(np.float64), axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)[0]
        if bad.size:
            row = int(bad[0])
            raise ValidationError(
                f"id {int(self._ids[row])}: vector norm {norms[row]:.6f} "
                f"deviates from 1.0 by more than {NORM_TOLERANCE}"
            )

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, id_: int) -> bool:
        return int(id_) in self._row_of

    def ids(self) -> list[int]:
        return [int(i) for i in self._ids]

    def vector(self, id_: int) -> np.ndarray:
        row = self._row_of.get(int(id_))
        if row is None:
            raise KeyError(f"id {id_} not in store")
        return self._vectors[row]

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids uint64 (n,), vectors float32 (n, dim)) in file order."""
        return self._ids, self._vectors

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingStore)
            and self.dim == other.dim
            and self.kind == other.kind
            and np.array_equal(self._ids, other._ids)
            and self._vectors.tobytes() == other._vectors.tobytes()
        )


def load_corpus(path) -> list[ImageRecord]:
    """Read a JSON-lines corpus of {id, caption, source_url?} objects."""
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
                raise CorpusParseError(path, line_number, f"malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusParseError(path, line_number, "line is not a JSON object")
            if "id" not in obj or "caption" not in obj:
                raise CorpusParseError(path, line_number, "missing required field 'id' or 'caption'")
            id_ = obj["id"]
            if not isinstance(id_, int) or isinstance(id_, bool) or not 0 <= id_ <= _MAX_ID:
                raise CorpusParseError(path, line_number, f"id must be an unsigned 64-bit integer, got {id_!r}")
            caption = obj["caption"]
            if not isinstance(caption, str) or not caption.strip():
                raise CorpusParseError(path, line_number, "caption must be a non-empty string")
            url = obj.get("source_url")
            if url is not None and not isinstance(url, str):
                raise CorpusParseError(path, line_number, "source_url must be a string when present")
            if id_ in seen:
                raise ValidationError(f"duplicate id {id_} at {path}:{line_number}")
            seen.add(id_)
            records.append(ImageRecord(id_, caption, url))
    return records


def write_corpus(records, path):
    """Inverse of load_corpus; one compact JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"id": rec.id, "caption": rec.caption}
            if rec.source_url is not None:
                obj["source_url"] = rec.source_url
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def write_store(store: EmbeddingStore, path):
    ids, vectors = store.matrix()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, store.dim, store.kind, len(store)))
        for row in range(len(store)):
            fh.write(struct.pack("<Q", int(ids[row])))
            fh.write(vectors[row].astype("<f4").tobytes())


def read_store(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header ({len(header)} bytes)")
        magic, dim, kind, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if kind not in KIND_NAMES:
            raise FormatError(f"{path}: unknown store kind {kind}")
        if dim < 1:
            raise FormatError(f"{path}: non-positive dim {dim}")
        record_size = 8 + 4 * dim
        body = fh.read()
    if len(body) != count * record_size:
        raise FormatError(
            f"{path}: body is {len(body)} bytes, expected {count * record_size} "
            f"for {count} records of dim {dim}"
        )
    ids = np.empty(count, dtype=np.uint64)
    vectors = np.empty((count, dim), dtype=np.float32)
    for row in range(count):
        off = row * record_size
        ids[row] = struct.unpack_from("<Q", body, off)[0]
        vectors[row] = np.frombuffer(body, dtype="<f4", count=dim, offset=off + 8)
    if len(set(ids.tolist())) != count:
        raise ValidationError(f"{path}: duplicate ids in store")
    store = EmbeddingStore(dim, kind, ids, vectors)
    store._check_norms()
    return store


_TOKEN_CACHE: dict[tuple, np.ndarray] = {}


def token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Unit float64 vector for one token, from the counter-based stream.

    Cached process-wide; callers must not mutate the returned array.
    """
    key = (seed, dim, token)
    v = _TOKEN_CACHE.get(key)
    if v is None:
        raw = HashRng(seed, "tok", token).normals(dim)
        v = raw / np.linalg.norm(raw)
        _TOKEN_CACHE[key] = v
    return v


def synthetic_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic bag-of-tokens stand-in for a sentence encoder.

    Each token maps to a pseudo-random unit vector keyed by (seed, token
    bytes); the token vectors are summed in sorted order (multiset, so
    repeated tokens count twice) and the sum is L2-normalized.  Captions
    sharing tokens therefore land near each other in cosine space, which
    is all the mining pipeline needs from an encoder.
    """
    if dim < 8:
        raise ValidationError(f"synthetic_embed requires dim >= 8, got {dim}")
    tokens = sorted(tokenize(text))
    if not tokens:
        return token_vector("", dim, seed)
    acc = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        acc += token_vector(token, dim, seed)
    norm = np.linalg.norm(acc)
    if norm == 0.0:
        raise ValidationError("token vectors cancelled to the zero vector")
    return acc / norm


def make_embedder(dim: int, seed: int = 0):
    """Memoized text -> unit vector callable over synthetic_embed."""
    cache: dict[str, np.ndarray] = {}

    def embed(text: str) -> np.ndarray:
        v = cache.get(text)
        if v is None:
            v = synthetic_embed(text, dim, seed)
            cache[text] = v
        return v

    return embed
