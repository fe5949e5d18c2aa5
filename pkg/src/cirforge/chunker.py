"""Deterministic noun-phrase and number extraction from captions.

A flat word -> coarse-tag lexicon stands in for a statistical POS tagger.
Unknown alphabetic words default to NOUN, so the chunker errs toward
producing candidate phrases; downstream similarity filters discard the
junk.  Noun phrases follow the grammar DET? ADJ* NOUN+ with greedy-longest
matching, scanned left to right without overlap.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

TAGS = ("DET", "ADJ", "NOUN", "NUM", "OTHER")

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# Number words resolvable to integer values; kept in sync with the NUM
# entries of the bundled lexicon.
NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
    "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19, "twenty": 20, "thirty": 30, "forty": 40,
    "fifty": 50, "sixty": 60, "seventy": 70, "eighty": 80,
    "ninety": 90, "hundred": 100,
}


def tokenize(caption: str) -> list[str]:
    """Lowercased maximal alphanumeric runs, in order; punctuation dropped."""
    return _TOKEN_RE.findall(caption.lower())


@dataclass(frozen=True)
class NounPhrase:
    text: str
    start_token: int
    end_token: int  # exclusive

    def __post_init__(self):
        if self.end_token <= self.start_token:
            raise ValueError("empty noun-phrase span")


@dataclass(frozen=True)
class NumberMention:
    """A numeric token and the noun phrase immediately following it."""

    value: int
    token_index: int
    phrase: NounPhrase | None


class Lexicon:
    """Word -> coarse tag map with documented defaults for unknown words."""

    def __init__(self, entries: dict[str, str]):
        for word, tag in entries.items():
            if tag not in TAGS:
                raise ValueError(f"unknown tag {tag!r} for word {word!r}")
        self._entries = dict(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def tag(self, token: str) -> str:
        tag = self._entries.get(token)
        if tag is not None:
            return tag
        if token.isdigit():
            return "NUM"
        if token.isalpha():
            return "NOUN"
        return "OTHER"

    @classmethod
    def load(cls, path) -> "Lexicon":
        """Parse a UTF-8 file of one ``word<TAB>TAG`` per line."""
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                word, _, tag = line.partition("\t")
                entries[word.strip()] = tag.strip()
        return cls(entries)

    @classmethod
    def bundled(cls) -> "Lexicon":
        text = resources.files("cirforge.data").joinpath("lexicon.tsv").read_text("utf-8")
        entries = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, _, tag = line.partition("\t")
            entries[word.strip()] = tag.strip()
        return cls(entries)


def extract_noun_phrases(caption: str, lexicon: Lexicon) -> list[NounPhrase]:
    """Maximal DET? ADJ* NOUN+ spans, left to right, non-overlapping."""
    tokens = tokenize(caption)
    tags = [lexicon.tag(t) for t in tokens]
    phrases = []
    i = 0
    n = len(tokens)
    while i < n:
        j = i
        if j < n and tags[j] == "DET":
            j += 1
        while j < n and tags[j] == "ADJ":
            j += 1
        k = j
        while k < n and tags[k] == "NOUN":
            k += 1
        if k > j:  # at least one NOUN
            phrases.append(NounPhrase(" ".join(tokens[i:k]), i, k))
            i = k
        else:
            i += 1
    return phrases


def extract_numbers(caption: str, lexicon: Lexicon) -> list[NumberMention]:
    """Digit tokens and lexicon NUM words, each with its following phrase.

    A phrase "follows" a number when its span starts on the very next
    token.  Zero is not a cardinality and is skipped, as are NUM words
    with no known integer value.
    """
    tokens = tokenize(caption)
    phrases = extract_noun_phrases(caption, lexicon)
    phrase_at = {p.start_token: p for p in phrases}
    mentions = []
    for i, token in enumerate(tokens):
        if lexicon.tag(token) != "NUM":
            continue
        if token.isdigit():
            value = int(token)
        else:
            value = NUMBER_WORDS.get(token)
        if not value:  # None or 0
            continue
        mentions.append(NumberMention(value, i, phrase_at.get(i + 1)))
    return mentions
