"""Target-image retrieval and triplet assembly.

Given an edited caption, the miner embeds it, scans the corpus caption
store with exact cosine similarity, and keeps the best hit when it clears
the threshold.  Everything is keyed by (seed, record id) so mining a
corpus is reproducible regardless of iteration details.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .chunker import Lexicon
from .errors import LlmParseError, NotApplicable, ValidationError
from .llm import generate_llm_edit
from .rng import HashRng
from .store import EmbeddingStore, ImageRecord
from .templates import (
    SIMILARITY_BAND,
    EditContext,
    EditResult,
    EditType,
    apply_edit,
    corpus_phrase_pool,
)

DEFAULT_THRESHOLD = 0.6
LLM_EDIT_TYPE = "llm"


@dataclass(frozen=True)
class Triplet:
    ref_id: int
    target_id: int
    relative_caption: str
    edit_type: str  # EditType value or "llm"
    mining_similarity: float

    def __post_init__(self):
        if self.ref_id == self.target_id:
            raise ValueError("triplet reference and target must differ")

    def to_json(self) -> str:
        return json.dumps(
            {
                "ref_id": self.ref_id,
                "target_id": self.target_id,
                "relative_caption": self.relative_caption,
                "edit_type": self.edit_type,
                "mining_similarity": self.mining_similarity,
            },
            sort_keys=True,
        )


def load_triplets(path) -> list[Triplet]:
    triplets = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            triplets.append(
                Triplet(
                    obj["ref_id"],
                    obj["target_id"],
                    obj["relative_caption"],
                    obj["edit_type"],
                    obj["mining_similarity"],
                )
            )
    return triplets


def rank_by_caption(query_vector, store: EmbeddingStore, top_k: int,
                    exclude=frozenset()) -> list[tuple[int, float]]:
    """Exact cosine scan, descending; ties broken by ascending id."""
    query = np.asarray(query_vector, dtype=np.float64)
    if query.shape != (store.dim,):
        raise ValidationError(f"query dim {query.shape} != store dim ({store.dim},)")
    if top_k < 1:
        raise ValidationError(f"top_k must be positive, got {top_k}")
    ids, vectors = store.matrix()
    if len(ids) == 0:
        return []
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0.0:
        raise ValidationError("query vector has zero norm")
    mat = vectors.astype(np.float64)
    sims = mat @ (query / qnorm)
    sims /= np.linalg.norm(mat, axis=1)
    if exclude:
        keep = np.array([int(i) not in exclude for i in ids])
        ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))[:top_k]
    return [(int(ids[i]), float(sims[i])) for i in order]


def mine_targets(ref: ImageRecord, edit, store: EmbeddingStore, embed,
                 threshold: float, exclude_extra=frozenset(), top_n: int = 1) -> list[Triplet]:
    """Up to top_n targets clearing the threshold, best first.

    Excludes the reference itself plus exclude_extra (the caller passes ids
    whose caption equals the reference caption, guarding trivial duplicates).
    """
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    if isinstance(edit, EditResult):
        relative, edited = edit.relative_caption, edit.edited_caption
        edit_type = edit.edit_type.value
    else:  # LlmEdit
        relative, edited = edit.instruction, edit.edited_description
        edit_type = LLM_EDIT_TYPE
    exclude = {ref.id} | set(exclude_extra)
    ranked = rank_by_caption(embed(edited), store, top_k=top_n, exclude=exclude)
    return [
        Triplet(ref.id, target_id, relative, edit_type, similarity)
        for target_id, similarity in ranked
        if similarity >= threshold
    ]


def mine_triplet(ref: ImageRecord, edit, store: EmbeddingStore, embed,
                 threshold: float, exclude_extra=frozenset()) -> Triplet | None:
    """The argmax target for an edit, or None when nothing clears the threshold."""
    hits = mine_targets(ref, edit, store, embed, threshold, exclude_extra, top_n=1)
    return hits[0] if hits else None


@dataclass
class DatasetStats:
    total_records: int = 0
    total_triplets: int = 0
    emitted: dict = field(default_factory=dict)          # edit type -> count
    not_applicable: dict = field(default_factory=dict)   # edit type -> count
    below_threshold: dict = field(default_factory=dict)  # edit type -> count
    llm_parse_failures: int = 0

    def _bump(self, table: dict, key: str):
        table[key] = table.get(key, 0) + 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "total_records": self.total_records,
                "total_triplets": self.total_triplets,
                "emitted": dict(sorted(self.emitted.items())),
                "not_applicable": dict(sorted(self.not_applicable.items())),
                "below_threshold": dict(sorted(self.below_threshold.items())),
                "llm_parse_failures": self.llm_parse_failures,
            },
            sort_keys=True,
        )


def default_edit_mix() -> dict[EditType, float]:
    return {t: 1.0 for t in EditType}


def build_dataset(corpus, store, method, threshold, seed, out_path, embed,
                  edit_type_mix=None, lexicon=None, band=SIMILARITY_BAND,
                  transport=None, retries=2, targets_per_query=1) -> DatasetStats:
    """Mine triplets for a whole corpus into a JSON-lines file.

    method is "template" or "llm".  Records are visited in ascending id
    order; each record gets its own (seed, id)-keyed generator, so output
    is a pure function of (corpus, seed, method knobs).
    """
    if method not in ("template", "llm"):
        raise ValidationError(f"unknown mining method {method!r}")
    if method == "llm" and transport is None:
        raise ValidationError("llm method requires a transport")
    records = sorted(corpus, key=lambda r: r.id)
    stats = DatasetStats(total_records=len(records))

    mix = edit_type_mix if edit_type_mix is not None else default_edit_mix()
    types = [t for t in EditType if mix.get(t, 0.0) > 0.0]
    weights = [float(mix[t]) for t in types]
    if method == "template" and (not types or sum(weights) <= 0.0):
        raise ValidationError("edit type mix must have a positive weight")

    lexicon = lexicon or Lexicon.bundled()
    captions = [r.caption for r in records]
    ids_by_caption: dict[str, set[int]] = {}
    for rec in records:
        ids_by_caption.setdefault(rec.caption, set()).add(rec.id)
    phrase_pool = corpus_phrase_pool(captions, lexicon) if method == "template" else []

    with open(out_path, "w", encoding="utf-8") as out:
        for rec in records:
            if method == "template":
                edit_type = HashRng(seed, "type", rec.id).weighted_choice(types, weights)
                ctx = EditContext.build(
                    rec.caption, lexicon, phrase_pool, embed,
                    band=band, corpus_captions=captions,
                )
                try:
                    edit = apply_edit(edit_type, ctx, HashRng(seed, "edit", rec.id))
                except NotApplicable:
                    stats._bump(stats.not_applicable, edit_type.value)
                    continue
                stat_key = edit_type.value
            else:
                try:
                    edit = generate_llm_edit(rec.caption, transport, retries=retries)
                except LlmParseError:
                    stats.llm_parse_failures += 1
                    continue
                stat_key = LLM_EDIT_TYPE
            exclude = ids_by_caption.get(rec.caption, set())
            hits = mine_targets(rec, edit, store, embed, threshold,
                                exclude_extra=exclude, top_n=targets_per_query)
            if not hits:
                stats._bump(stats.below_threshold, stat_key)
                continue
            for triplet in hits:
                stats._bump(stats.emitted, stat_key)
                stats.total_triplets += 1
                out.write(triplet.to_json() + "\n")
    return stats
