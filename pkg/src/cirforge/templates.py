"""Rule-based caption edits: eight semantic operations over noun phrases.

Each operation turns a reference caption into a (relative caption, edited
caption) pair.  Templated types instantiate one of the bundled template
strings; rule-based types (direct addressing, comparative, conjunction)
rewrite captions directly.  Substituted phrases are drawn from a corpus
phrase pool, restricted to a cosine-similarity band so the replacement is
related but not identical.

Edited captions are emitted in normalized token form (lowercase, space
joined, punctuation-free): every rewrite operates on the token sequence,
the only representation in which span surgery is well-defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

from .chunker import (
    Lexicon,
    NounPhrase,
    NumberMention,
    extract_noun_phrases,
    extract_numbers,
    tokenize,
)
from .errors import NotApplicable
from .rng import HashRng

SIMILARITY_BAND = (0.5, 0.7)


class EditType(Enum):
    CARDINALITY = "cardinality"
    ADDITION = "addition"
    NEGATION = "negation"
    DIRECT_ADDRESSING = "direct_addressing"
    COMPARE_CHANGE = "compare_change"
    COMPARATIVE = "comparative"
    VIEWPOINT = "viewpoint"
    CONJUNCTION = "conjunction"


# Types a conjunction may combine: the content edits, excluding direct
# addressing (whose rewrite replaces the whole caption) and itself.
CONJUNCTION_MEMBERS = (
    EditType.CARDINALITY,
    EditType.ADDITION,
    EditType.NEGATION,
    EditType.COMPARE_CHANGE,
    EditType.COMPARATIVE,
    EditType.VIEWPOINT,
)


@dataclass(frozen=True)
class EditResult:
    relative_caption: str
    edited_caption: str
    edit_type: EditType
    substitution_similarity: float | None = None

    def __post_init__(self):
        if not self.relative_caption or not self.edited_caption:
            raise ValueError("edit produced an empty caption")


def _load_table(name: str) -> list[tuple[str, ...]]:
    text = resources.files("cirforge.data").joinpath(name).read_text("utf-8")
    rows = []
    for line in text.splitlines():
        line = line.strip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append(tuple(line.split("\t")))
    return rows


def _template_tables() -> dict[EditType, list[str]]:
    tables: dict[EditType, list[str]] = {}
    for type_name, template in _load_table("templates.tsv"):
        tables.setdefault(EditType(type_name), []).append(template)
    return tables


def _antonym_table() -> dict[str, tuple[str, str]]:
    """adjective -> (antonym, comparative form of the antonym)."""
    return {adj: (ant, comp) for adj, ant, comp in _load_table("antonyms.tsv")}


_TEMPLATES = _template_tables()
_ANTONYMS = _antonym_table()


def list_templates(edit_type: EditType) -> list[str]:
    """Template strings for an edit type; empty for the rule-based types."""
    return list(_TEMPLATES.get(edit_type, []))


def antonym_of(adjective: str) -> tuple[str, str] | None:
    return _ANTONYMS.get(adjective)


def select_similar_phrase(anchor, candidates, embed, band=SIMILARITY_BAND, rng=None):
    """Uniformly pick a candidate whose cosine to the anchor is inside band.

    Returns (phrase, similarity) or None when no candidate qualifies.  The
    anchor itself scores 1.0 and never qualifies while band[1] < 1.
    """
    low, high = band
    if not low < high:
        raise ValueError(f"invalid band [{low}, {high}]")
    if rng is None:
        rng = HashRng(0, "select")
    anchor_text = anchor.text if isinstance(anchor, NounPhrase) else str(anchor)
    a = embed(anchor_text)
    qualifying = []
    for cand in candidates:
        sim = float(np.dot(a, embed(cand.text)))
        if low <= sim <= high:
            qualifying.append((cand, sim))
    if not qualifying:
        return None
    return rng.choice(qualifying)


@dataclass
class EditContext:
    """Everything apply_edit needs to know about one caption and its corpus."""

    caption: str
    tokens: list[str]
    phrases: list[NounPhrase]
    numbers: list[NumberMention]
    lexicon: Lexicon
    phrase_pool: list[NounPhrase]
    embed: object  # text -> unit vector
    band: tuple[float, float] = SIMILARITY_BAND
    corpus_captions: list[str] | None = field(default=None, repr=False)

    @classmethod
    def build(cls, caption, lexicon, phrase_pool, embed,
              band=SIMILARITY_BAND, corpus_captions=None) -> "EditContext":
        return cls(
            caption=caption,
            tokens=tokenize(caption),
            phrases=extract_noun_phrases(caption, lexicon),
            numbers=extract_numbers(caption, lexicon),
            lexicon=lexicon,
            phrase_pool=phrase_pool,
            embed=embed,
            band=band,
            corpus_captions=corpus_captions,
        )

    def rebuilt(self, caption: str) -> "EditContext":
        """Same corpus context, fresh chunker outputs for a new caption."""
        return EditContext.build(
            caption, self.lexicon, self.phrase_pool, self.embed,
            band=self.band, corpus_captions=self.corpus_captions,
        )


def corpus_phrase_pool(captions, lexicon) -> list[NounPhrase]:
    """All noun phrases across a corpus, deduplicated by text, text-sorted."""
    seen = {}
    for caption in captions:
        for phrase in extract_noun_phrases(caption, lexicon):
            seen.setdefault(phrase.text, phrase)
    return [seen[text] for text in sorted(seen)]


def _join(tokens) -> str:
    return " ".join(tokens)


def _edit_cardinality(ctx: EditContext, rng: HashRng) -> EditResult:
    mentions = [m for m in ctx.numbers if m.phrase is not None]
    if not mentions:
        raise NotApplicable(EditType.CARDINALITY, "no number followed by a noun phrase")
    mention = rng.choice(mentions)
    noun = mention.phrase.text
    num1 = ctx.tokens[mention.token_index]
    template = rng.choice(list_templates(EditType.CARDINALITY))
    if "{num2}" in template:
        choices = [n for n in range(2, 11) if n != mention.value]
        num2 = rng.choice(choices)
        relative = template.format(noun=noun, num1=num1, num2=num2)
        replacement = [str(num2)]
    else:  # "a group of" form
        relative = template.format(noun=noun, num1=num1)
        replacement = ["a", "group", "of"]
    tokens = list(ctx.tokens)
    tokens[mention.token_index:mention.token_index + 1] = replacement
    return EditResult(relative, _join(tokens), EditType.CARDINALITY)


def _noun_token_indices(ctx: EditContext) -> list[int]:
    return [i for i, tok in enumerate(ctx.tokens) if ctx.lexicon.tag(tok) == "NOUN"]


def _edit_addition(ctx: EditContext, rng: HashRng) -> EditResult:
    nouns = _noun_token_indices(ctx)
    if not nouns:
        raise NotApplicable(EditType.ADDITION, "caption has no noun token")
    idx = rng.choice(nouns)
    anchor = NounPhrase(ctx.tokens[idx], idx, idx + 1)
    picked = select_similar_phrase(anchor, ctx.phrase_pool, ctx.embed, ctx.band, rng)
    if picked is None:
        raise NotApplicable(EditType.ADDITION, f"no pool phrase within band of {anchor.text!r}")
    phrase, sim = picked
    template = rng.choice(list_templates(EditType.ADDITION))
    relative = template.format(noun=phrase.text)
    edited = _join(ctx.tokens + ["with"] + phrase.text.split())
    return EditResult(relative, edited, EditType.ADDITION, substitution_similarity=sim)


def _edit_negation(ctx: EditContext, rng: HashRng) -> EditResult:
    if not ctx.phrases:
        raise NotApplicable(EditType.NEGATION, "caption has no noun phrase")
    phrase = rng.choice(ctx.phrases)
    start, end = phrase.start_token, phrase.end_token
    if start > 0 and ctx.tokens[start - 1] in ("with", "and"):
        start -= 1  # drop the dangling connective too
    tokens = ctx.tokens[:start] + ctx.tokens[phrase.end_token:]
    if not tokens:
        raise NotApplicable(EditType.NEGATION, "removal would empty the caption")
    template = rng.choice(list_templates(EditType.NEGATION))
    relative = template.format(noun_phrase=phrase.text)
    return EditResult(relative, _join(tokens), EditType.NEGATION)


def _edit_direct_addressing(ctx: EditContext, rng: HashRng) -> EditResult:
    if not ctx.corpus_captions:
        raise NotApplicable(EditType.DIRECT_ADDRESSING, "no corpus captions available")
    low, high = ctx.band
    ref_vec = ctx.embed(ctx.caption)
    qualifying = []
    for caption in ctx.corpus_captions:
        if caption == ctx.caption:
            continue
        sim = float(np.dot(ref_vec, ctx.embed(caption)))
        if low <= sim <= high:
            qualifying.append((caption, sim))
    if not qualifying:
        raise NotApplicable(EditType.DIRECT_ADDRESSING, "no corpus caption within the band")
    target_caption, _sim = rng.choice(qualifying)
    return EditResult(target_caption, target_caption, EditType.DIRECT_ADDRESSING)


def _edit_compare_change(ctx: EditContext, rng: HashRng) -> EditResult:
    if not ctx.phrases:
        raise NotApplicable(EditType.COMPARE_CHANGE, "caption has no noun phrase")
    phrase1 = rng.choice(ctx.phrases)
    picked = select_similar_phrase(phrase1, ctx.phrase_pool, ctx.embed, ctx.band, rng)
    if picked is None:
        raise NotApplicable(EditType.COMPARE_CHANGE, f"no pool phrase within band of {phrase1.text!r}")
    phrase2, sim = picked
    template = rng.choice(list_templates(EditType.COMPARE_CHANGE))
    relative = template.format(noun_phrase1=phrase1.text, noun_phrase2=phrase2.text)
    tokens = ctx.tokens[:phrase1.start_token] + phrase2.text.split() + ctx.tokens[phrase1.end_token:]
    return EditResult(relative, _join(tokens), EditType.COMPARE_CHANGE, substitution_similarity=sim)


def _edit_comparative(ctx: EditContext, rng: HashRng) -> EditResult:
    candidates = []
    for i, tok in enumerate(ctx.tokens):
        if ctx.lexicon.tag(tok) != "ADJ" or tok not in _ANTONYMS:
            continue
        noun_idx = next(
            (j for j in range(i + 1, len(ctx.tokens)) if ctx.lexicon.tag(ctx.tokens[j]) == "NOUN"),
            None,
        )
        if noun_idx is not None:
            candidates.append((i, noun_idx))
    if not candidates:
        raise NotApplicable(EditType.COMPARATIVE, "no known adjective modifying a noun")
    adj_idx, noun_idx = rng.choice(candidates)
    antonym, comparative = _ANTONYMS[ctx.tokens[adj_idx]]
    relative = f"{comparative} {ctx.tokens[noun_idx]}"
    tokens = list(ctx.tokens)
    tokens[adj_idx] = antonym
    return EditResult(relative, _join(tokens), EditType.COMPARATIVE)


_VIEWPOINT_SIZE = {"zoom in": "big", "zoom out": "small", "focus": "big"}


def _edit_viewpoint(ctx: EditContext, rng: HashRng) -> EditResult:
    nouns = _noun_token_indices(ctx)
    if not nouns:
        raise NotApplicable(EditType.VIEWPOINT, "caption has no noun token")
    idx = rng.choice(nouns)
    template = rng.choice(list_templates(EditType.VIEWPOINT))
    relative = template.format(noun=ctx.tokens[idx])
    size = next(word for prefix, word in _VIEWPOINT_SIZE.items() if template.startswith(prefix))
    tokens = list(ctx.tokens)
    tokens.insert(idx + 1, size)
    return EditResult(relative, _join(tokens), EditType.VIEWPOINT)


def _edit_conjunction(ctx: EditContext, rng: HashRng) -> EditResult:
    order = rng.shuffled(CONJUNCTION_MEMBERS)
    attempt = 0
    for i, first in enumerate(order):
        for second in order[i + 1:]:
            attempt += 1
            sub_rng = rng.spawn("conj", attempt)
            try:
                r1 = apply_edit(first, ctx, sub_rng.spawn("a"))
                r2 = apply_edit(second, ctx.rebuilt(r1.edited_caption), sub_rng.spawn("b"))
            except NotApplicable:
                continue
            if " and " in r1.relative_caption or " and " in r2.relative_caption:
                continue
            similarity = next(
                (s for s in (r1.substitution_similarity, r2.substitution_similarity) if s is not None),
                None,
            )
            return EditResult(
                f"{r1.relative_caption} and {r2.relative_caption}",
                r2.edited_caption,
                EditType.CONJUNCTION,
                substitution_similarity=similarity,
            )
    raise NotApplicable(EditType.CONJUNCTION, "no applicable pair of edit types")


_APPLIERS = {
    EditType.CARDINALITY: _edit_cardinality,
    EditType.ADDITION: _edit_addition,
    EditType.NEGATION: _edit_negation,
    EditType.DIRECT_ADDRESSING: _edit_direct_addressing,
    EditType.COMPARE_CHANGE: _edit_compare_change,
    EditType.COMPARATIVE: _edit_comparative,
    EditType.VIEWPOINT: _edit_viewpoint,
    EditType.CONJUNCTION: _edit_conjunction,
}


def apply_edit(edit_type: EditType, ctx: EditContext, rng: HashRng) -> EditResult:
    """Apply one edit type; raises NotApplicable when the caption lacks material."""
    if not ctx.caption:
        raise ValueError("caption must be non-empty")
    return _APPLIERS[edit_type](ctx, rng)
