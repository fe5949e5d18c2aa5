"""Counter-based deterministic random generator.

All randomness in the pipeline flows through :class:`HashRng`, a SHA-256
counter-mode stream keyed by an integer seed plus string labels.  Unlike
process-global PRNGs, a stream keyed by (seed, record id) produces the same
draws no matter how many unrelated draws happened before it, which is what
makes mining, batching and parameter init reproducible byte-for-byte and
independent of iteration details or worker counts.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_U64 = 1 << 64
_SEP = b"\x1f"


def _encode_label(label) -> bytes:
    if isinstance(label, bytes):
        return label
    if isinstance(label, str):
        return label.encode("utf-8")
    if isinstance(label, int):
        return label.to_bytes(16, "little", signed=True)
    raise TypeError(f"unsupported rng label type: {type(label).__name__}")


class HashRng:
    """Deterministic stream of draws keyed by (seed, *labels)."""

    def __init__(self, seed: int, *labels):
        key = int(seed).to_bytes(8, "little", signed=False)
        for label in labels:
            key += _SEP + _encode_label(label)
        self._key = hashlib.sha256(key).digest()
        self._counter = 0
        self._buffer = b""

    def spawn(self, *labels) -> "HashRng":
        """Independent child stream; drawing from it never touches this one."""
        child = HashRng.__new__(HashRng)
        key = self._key
        for label in labels:
            key += _SEP + _encode_label(label)
        child._key = hashlib.sha256(key).digest()
        child._counter = 0
        child._buffer = b""
        return child

    def _take(self, n: int) -> bytes:
        while len(self._buffer) < n:
            block = hashlib.sha256(self._key + self._counter.to_bytes(8, "little")).digest()
            self._counter += 1
            self._buffer += block
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "little")

    def uniform(self) -> float:
        """float64 in [0, 1) with 53 random mantissa bits."""
        return (self.u64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller on paired uniforms."""
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            u1 = self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1 + 2.0**-53))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            i += 1
            if i < n:
                out[i] = r * math.sin(2.0 * math.pi * u2)
                i += 1
        return out

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi); rejection sampling, no modulo bias."""
        span = hi - lo
        if span <= 0:
            raise ValueError(f"empty range [{lo}, {hi})")
        limit = _U64 - (_U64 % span)
        while True:
            x = self.u64()
            if x < limit:
                return lo + (x % span)

    def choice(self, seq):
        if not seq:
            raise ValueError("choice from empty sequence")
        return seq[self.randint(0, len(seq))]

    def weighted_choice(self, items, weights):
        """Pick items[i] with probability weights[i]/sum(weights)."""
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("weights must have positive sum")
        r = self.uniform() * total
        acc = 0.0
        for item, w in zip(items, weights):
            acc += float(w)
            if r < acc:
                return item
        return items[-1]

    def shuffled(self, seq) -> list:
        """Fisher-Yates permutation of seq as a new list."""
        out = list(seq)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(0, i + 1)
            out[i], out[j] = out[j], out[i]
        return out
