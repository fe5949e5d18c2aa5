"""Mine triplets with the LLM path, fully offline via the mock transport.

The prompt/parse machinery is exactly what a live chat endpoint would see;
only the transport is swapped.  A live run needs CIRFORGE_LLM_ENDPOINT,
CIRFORGE_LLM_MODEL and CIRFORGE_LLM_TOKEN in the environment.
"""

import tempfile
from pathlib import Path

import numpy as np

from cirforge.llm import MockTransport, build_prompt, parse_response
from cirforge.miner import build_dataset
from cirforge.store import EmbeddingStore, KIND_CAPTION, load_corpus, make_embedder

corpus_path = Path(__file__).resolve().parents[1] / "src" / "cirforge" / "data" / "demo_corpus.jsonl"
records = load_corpus(corpus_path)[:30]

print("prompt sent for the first caption:\n")
print(build_prompt(records[0].caption))

# canned responses: each caption is "edited" toward its successor's scene
responses = {}
for i, record in enumerate(records):
    target_caption = records[(i + 1) % len(records)].caption
    responses[record.caption] = (
        "Instruction: transform the scene accordingly.\n"
        f"Edited Description: {target_caption}"
    )
transport = MockTransport(responses)

print("\nparsed example response:", parse_response(responses[records[0].caption]))

embed = make_embedder(dim=128, seed=0)
store = EmbeddingStore.from_entries(
    128, KIND_CAPTION, ((r.id, embed(r.caption).astype(np.float32)) for r in records))
out = Path(tempfile.mkdtemp(prefix="cirforge-llm-")) / "triplets.jsonl"
stats = build_dataset(records, store, "llm", threshold=0.6, seed=0,
                      out_path=out, embed=embed, transport=transport)
print(f"\nmined {stats.total_triplets} llm triplets -> {out}")
print(stats.to_json())
