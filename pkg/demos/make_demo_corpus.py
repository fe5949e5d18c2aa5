"""Regenerate the bundled 500-caption demo corpus.

Captions are drawn from slot patterns and emitted in families: one base
combination plus two variants that each flip two slots.  Two-slot flips
keep every caption within mining range of its siblings (six of eight
tokens shared puts the cosine near 0.75 under the bag-of-tokens embedder)
while keeping gallery members distinguishable: no two captions in the
corpus differ by just one token, so desk-scale training can actually
separate them.  Counts, known-antonym adjectives, and banded noun phrases
appear throughout, keeping all eight edit types applicable somewhere.

Run from the repository root:

    python demos/make_demo_corpus.py

The output is committed at src/cirforge/data/demo_corpus.jsonl; this
script documents its provenance (seed 2024).
"""

import json
import pathlib

from cirforge.rng import HashRng

COUNTS = ["2", "3", "4", "5", "6"]
COLORS = ["red", "blue", "green", "yellow", "white", "brown",
          "purple", "gray", "pink", "black", "golden", "silver"]
SIZES = ["big", "small", "tall", "short", "old", "young",
         "bright", "dark", "clean", "dirty", "quiet", "happy"]
ANIMALS = ["dog", "cat", "bird", "horse", "rabbit", "sheep", "duck",
           "fox", "frog", "owl", "goat", "pig", "deer", "mouse"]
OBJECTS = ["sofa", "chair", "table", "lamp", "car", "truck", "boat",
           "bicycle", "basket", "kite", "bench", "stool", "shelf", "mirror"]
FRUITS = ["apple", "banana", "cherry", "grape", "lemon", "peach", "plum", "melon"]
PLACES = ["garden", "park", "beach", "field", "kitchen", "barn", "river",
          "hill", "market", "street", "valley", "forest", "harbor", "meadow"]
VERBS = ["sitting", "sleeping", "playing", "running", "jumping", "resting",
         "standing", "walking", "eating", "waiting", "grazing", "dozing"]
PREPS = ["on", "near", "under", "beside", "behind", "above"]

PATTERNS = {
    "count_scene": (
        "{count} {color} {animal}s {verb} {prep} the {size} {object}",
        ("count", "color", "animal", "verb", "prep", "size", "object"),
    ),
    "simple_scene": (
        "a {color} {animal} {verb} in the {place}",
        ("color", "animal", "verb", "place"),
    ),
    "two_objects": (
        "a {size} {object} and a {color} {object2} near the {place}",
        ("size", "object", "color", "object2", "place"),
    ),
    "fruit_basket": (
        "{count} {fruit}s in a {color} basket on the {object}",
        ("count", "fruit", "color", "object"),
    ),
    "animal_object": (
        "{count} {size} {animal}s {verb} {prep} the {object}",
        ("count", "size", "animal", "verb", "prep", "object"),
    ),
}

SLOT_VALUES = {
    "count": COUNTS, "color": COLORS, "size": SIZES, "animal": ANIMALS,
    "object": OBJECTS, "object2": OBJECTS, "fruit": FRUITS,
    "place": PLACES, "verb": VERBS, "prep": PREPS,
}


def render(pattern: str, slots: dict) -> str:
    return pattern.format(**slots)


def families(rng):
    """Base caption plus two variants, each two slot-flips away from it."""
    names = sorted(PATTERNS)
    while True:
        pattern, slot_names = PATTERNS[rng.choice(names)]
        slots = {name: rng.choice(SLOT_VALUES[name]) for name in slot_names}
        if "object2" in slots:
            while slots["object2"] == slots["object"]:
                slots["object2"] = rng.choice(SLOT_VALUES["object2"])
        captions = [render(pattern, slots)]
        for _ in range(2):
            variant = dict(slots)
            flips = rng.shuffled(slot_names)[:2]
            for name in flips:
                fresh = [v for v in SLOT_VALUES[name] if v != variant[name]]
                variant[name] = rng.choice(fresh)
            if "object2" in variant and variant["object2"] == variant["object"]:
                continue
            captions.append(render(pattern, variant))
        yield captions


def build_corpus(n=500, seed=2024):
    rng = HashRng(seed, "demo-corpus")
    seen = set()
    captions = []
    for family in families(rng):
        for caption in family:
            if caption not in seen:
                seen.add(caption)
                captions.append(caption)
            if len(captions) == n:
                return captions
    return captions


def main():
    out = pathlib.Path(__file__).resolve().parents[1] / "src" / "cirforge" / "data" / "demo_corpus.jsonl"
    captions = build_corpus()
    with open(out, "w", encoding="utf-8") as fh:
        for i, caption in enumerate(captions, start=1):
            fh.write(json.dumps({"id": i, "caption": caption}, sort_keys=True) + "\n")
    print(f"wrote {len(captions)} captions to {out}")


if __name__ == "__main__":
    main()
