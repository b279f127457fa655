"""Deterministic pseudo-random streams.

The generator is SplitMix64 (Steele, Lea & Flood's mixing applied to a
64-bit Weyl sequence): output(k) = mix64(seed + k * GOLDEN). It is
counter-based, so a whole block of draws vectorizes as one numpy
expression, and the sequence depends only on the 64-bit seed. The first
outputs for seed 0 are the published reference values pinned in the tests
(0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F, ...).

Per-purpose streams are derived from one master seed by folding a label
path (strings / integers) into the seed with FNV-1a and remixing, so e.g.
subject 3's noise stream and the training shuffle stream never overlap.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Stream:
    """One SplitMix64 stream. All draws are pure functions of (seed, position)."""

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & _U64)
        self._pos = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def next_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ValueError("draw count must be >= 0")
        with np.errstate(over="ignore"):
            ks = self._seed + (np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64)) * _GOLDEN
            out = _mix64(ks)
        self._pos += n
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1), using the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normals(self, shape) -> np.ndarray:
        """Standard normal variates via Box-Muller on paired uniforms."""
        n = int(np.prod(shape, dtype=np.int64)) if not np.isscalar(shape) else int(shape)
        m = (n + 1) // 2
        # u1 in (0, 1] so log() is finite
        u1 = (self.next_u64(m).astype(np.float64) + 1.0) * (2.0 ** -64)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if not np.isscalar(shape) else z

    def integers_below(self, bound: int, n: int) -> np.ndarray:
        """``n`` integers uniform on [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return np.minimum((self.uniforms(n) * bound).astype(np.int64), bound - 1)

    def choose(self, population: int, k: int) -> np.ndarray:
        """``k`` distinct indices from range(population), partial Fisher-Yates."""
        if not 0 <= k <= population:
            raise ValueError(f"cannot choose {k} from {population}")
        idx = np.arange(population, dtype=np.int64)
        draws = self.uniforms(k)
        for i in range(k):
            j = i + min(int(draws[i] * (population - i)), population - i - 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n)."""
        return self.choose(n, n)


def _fold_label(seed: int, label) -> int:
    h = _FNV_OFFSET
    if isinstance(label, str):
        payload = label.encode("utf-8")
    elif isinstance(label, (int, np.integer)):
        payload = int(label).to_bytes(8, "little", signed=False) if label >= 0 else (
            int(label) & _U64).to_bytes(8, "little", signed=False)
    else:
        raise TypeError(f"stream labels must be str or int, got {type(label)!r}")
    for b in payload:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return (seed ^ h) & _U64


def derive(master_seed: int, *path) -> Stream:
    """Stream for a labelled purpose, e.g. derive(seed, "noise", subj, sl)."""
    s = int(master_seed) & _U64
    for label in path:
        s = _fold_label(s, label)
        s = int(_mix64(np.uint64(s)))
    return Stream(s)
