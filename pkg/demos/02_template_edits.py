"""Apply each of the eight template edit types to sample captions.

Every successful edit yields a (relative caption, edited caption) pair:
the relative caption is the user-style instruction, the edited caption is
the description used to mine a target image.
"""

from cirforge.chunker import Lexicon
from cirforge.errors import NotApplicable
from cirforge.rng import HashRng
from cirforge.store import load_corpus, make_embedder
from cirforge.templates import EditContext, EditType, apply_edit, corpus_phrase_pool

from pathlib import Path

corpus_path = Path(__file__).resolve().parents[1] / "src" / "cirforge" / "data" / "demo_corpus.jsonl"
records = load_corpus(corpus_path)[:80]
captions = [r.caption for r in records]

lexicon = Lexicon.bundled()
embed = make_embedder(dim=256, seed=0)
phrase_pool = corpus_phrase_pool(captions, lexicon)

caption = captions[0]
print(f"reference caption: {caption!r}\n")
ctx = EditContext.build(caption, lexicon, phrase_pool, embed, corpus_captions=captions)

for edit_type in EditType:
    try:
        result = apply_edit(edit_type, ctx, HashRng(7, "demo", edit_type.value))
    except NotApplicable as exc:
        print(f"{edit_type.value:18} not applicable ({exc.reason})")
        continue
    print(f"{edit_type.value:18} relative: {result.relative_caption!r}")
    print(f"{'':18} edited:   {result.edited_caption!r}")
    if result.substitution_similarity is not None:
        print(f"{'':18} band similarity: {result.substitution_similarity:.3f}")
