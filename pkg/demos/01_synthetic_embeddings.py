"""Walk through the synthetic caption embedder and the binary store.

The embedder maps each token to a fixed pseudo-random unit vector and
normalizes the token-vector sum, so captions sharing words land near each
other in cosine space.  That single property powers phrase substitution,
target mining, and the toy encoders.
"""

import numpy as np

from cirforge.store import make_embedder, synthetic_embed

embed = make_embedder(dim=64, seed=0)

pairs = [
    ("a red dog on the grass", "a red dog sleeping on the grass"),
    ("a red dog on the grass", "a blue bird in the sky"),
    ("2 apples in a basket", "5 apples in a basket"),
    ("2 apples in a basket", "stock market chart"),
]

print("cosine similarities under the bag-of-tokens embedder:")
for a, b in pairs:
    sim = float(np.dot(embed(a), embed(b)))
    print(f"  {sim:6.3f}  {a!r} vs {b!r}")

print("\ndeterminism: same text, same seed, identical bits:",
      np.array_equal(synthetic_embed("a dog", 64, 0), synthetic_embed("a dog", 64, 0)))
print("token order never matters:",
      np.array_equal(synthetic_embed("red dog on grass", 64, 0),
                     synthetic_embed("grass on dog red", 64, 0)))
