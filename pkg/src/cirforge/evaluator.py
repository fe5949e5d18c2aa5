"""Zero-shot retrieval evaluation: gallery ranking and Recall@K metrics.

Per query, the composed vector is scored against every gallery feature by
exact cosine similarity; ties break toward the smaller id so recall values
are reproducible.  Recall@K is the fraction of queries whose target lands
in the top K; the subset variant ranks only the query's own candidate
subset.  When subsets are present the report also carries the benchmark
average (Recall@5 + Recall_Subset@1) / 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .store import EmbeddingStore


@dataclass(frozen=True)
class EvalQuery:
    ref_id: int
    relative_caption: str
    target_id: int
    subset_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.subset_ids is not None and self.target_id not in self.subset_ids:
            raise ValidationError(
                f"query target {self.target_id} missing from its subset {self.subset_ids}")


def load_queries(path) -> list[EvalQuery]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            subset = obj.get("subset_ids")
            queries.append(EvalQuery(
                obj["ref_id"], obj["relative_caption"], obj["target_id"],
                tuple(subset) if subset is not None else None,
            ))
    return queries


def write_queries(queries, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            obj = {"ref_id": q.ref_id, "relative_caption": q.relative_caption,
                   "target_id": q.target_id}
            if q.subset_ids is not None:
                obj["subset_ids"] = list(q.subset_ids)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


class Gallery:
    """Candidate ids with one global feature row per id."""

    def __init__(self, ids, features: np.ndarray):
        if len(ids) != features.shape[0]:
            raise ValidationError("gallery ids and features disagree in length")
        if len(set(ids)) != len(ids):
            raise ValidationError("gallery ids must be unique")
        self.ids = np.array(ids, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self._row_of = {int(i): r for r, i in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def row_of(self, image_id: int) -> int:
        row = self._row_of.get(int(image_id))
        if row is None:
            raise ValidationError(f"gallery has no feature for id {image_id}")
        return row

    @classmethod
    def from_model(cls, model, ids) -> "Gallery":
        rows = [model.target_feature(i).data[0] for i in ids]
        return cls(list(ids), np.vstack(rows))

    @classmethod
    def from_store(cls, store: EmbeddingStore, ids=None) -> "Gallery":
        ids = store.ids() if ids is None else list(ids)
        try:
            rows = [store.vector(i).astype(np.float64) for i in ids]
        except KeyError as exc:
            raise ValidationError(f"gallery has no feature for id {exc.args[0]}") from exc
        return cls(ids, np.vstack(rows))


@dataclass(frozen=True)
class RankingResult:
    query_index: int
    ranking: tuple  # ((id, score), ...) descending, ties by ascending id
    rank_of_target: int  # 1-based


def _cosine_scores(query_vector: np.ndarray, features: np.ndarray) -> np.ndarray:
    query = np.asarray(query_vector, dtype=np.float64).reshape(-1)
    if query.shape[0] != features.shape[1]:
        raise ValidationError(
            f"query dim {query.shape[0]} != gallery dim {features.shape[1]}")
    qnorm = np.linalg.norm(query)
    if qnorm == 0.0:
        raise ValidationError("query vector has zero norm")
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError("gallery contains a zero-norm feature")
    return (features @ query) / (norms * qnorm)


def rank_gallery(query_vector, gallery: Gallery, target_id: int | None = None,
                 query_index: int = 0, exclude_ids=frozenset()) -> RankingResult:
    """Exact descending cosine scan of the gallery minus excluded candidates."""
    if target_id is not None and target_id in exclude_ids:
        raise ValidationError(f"target {target_id} cannot be excluded from its own ranking")
    scores = _cosine_scores(query_vector, gallery.features)
    ids = gallery.ids
    if exclude_ids:
        keep = np.array([int(i) not in exclude_ids for i in ids])
        if not keep.any():
            raise ValidationError("every gallery candidate was excluded")
        ids, scores = ids[keep], scores[keep]
    order = np.lexsort((ids, -scores))
    ranking = tuple((int(ids[i]), float(scores[i])) for i in order)
    rank = 0
    if target_id is not None:
        gallery.row_of(target_id)  # raises when absent from the gallery
        rank = 1 + int(np.nonzero(ids[order] == target_id)[0][0])
    return RankingResult(query_index, ranking, rank)


def rank_within_subset(query_vector, gallery: Gallery, subset_ids, target_id: int,
                       exclude_ids=frozenset()) -> int:
    """1-based rank of the target among the subset only."""
    kept = [i for i in subset_ids if i not in exclude_ids]
    rows = [gallery.row_of(i) for i in kept]
    scores = _cosine_scores(query_vector, gallery.features[rows])
    ids = np.array([int(i) for i in kept], dtype=np.int64)
    order = np.lexsort((ids, -scores))
    return 1 + int(np.nonzero(ids[order] == target_id)[0][0])


def recall_at_k(ranks, k: int) -> float:
    """Fraction of 1-based target ranks that land in the top k."""
    if k < 1:
        raise ValidationError(f"K must be >= 1, got {k}")
    ranks = list(ranks)
    if not ranks:
        raise ValidationError("no ranks to score")
    return sum(1 for r in ranks if r <= k) / len(ranks)


def evaluate(model, queries, gallery: Gallery, ks=(1, 5, 10, 50),
             exclude_reference: bool = True) -> dict:
    """Compose every query, rank, and assemble the recall report.

    The query's own reference image is dropped from its candidate list by
    default: a composed query describes an edit of the reference, so the
    reference itself is a known false candidate (the miner enforces
    ref != target for the same reason).
    """
    if not queries:
        raise ValidationError("no queries to evaluate")
    with_subset = [q.subset_ids is not None for q in queries]
    if any(with_subset) and not all(with_subset):
        raise ValidationError("either every query carries subset_ids or none may")
    subsets = all(with_subset)

    full_ranks, subset_ranks = [], []
    for index, query in enumerate(queries):
        vector = model.compose_query(query.ref_id, query.relative_caption).data
        exclude = frozenset((query.ref_id,)) if exclude_reference else frozenset()
        result = rank_gallery(vector, gallery, target_id=query.target_id,
                              query_index=index, exclude_ids=exclude)
        full_ranks.append(result.rank_of_target)
        if subsets:
            subset_ranks.append(
                rank_within_subset(vector, gallery, query.subset_ids, query.target_id,
                                   exclude_ids=exclude))

    report = {"num_queries": len(queries)}
    for k in ks:
        report[f"recall_at_{k}"] = recall_at_k(full_ranks, k)
    if subsets:
        for k in ks:
            report[f"recall_subset_at_{k}"] = recall_at_k(subset_ranks, k)
        report["average"] = (recall_at_k(full_ranks, 5) + recall_at_k(subset_ranks, 1)) / 2.0
    return report


def format_report(report: dict) -> str:
    """Plain-text metric table, one row per metric, sorted for stable output."""
    width = max(len(k) for k in report)
    lines = [f"{'metric'.ljust(width)}  value", f"{'-' * width}  -----"]
    for key in sorted(report):
        value = report[key]
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        lines.append(f"{key.ljust(width)}  {shown}")
    return "\n".join(lines)
