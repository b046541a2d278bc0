"""Deterministic pseudo-random generator with a pinned algorithm.

The generator is xoshiro256** seeded through SplitMix64, both implemented
here in plain integer arithmetic so the draw sequence is identical on every
platform and never depends on numpy's (version-dependent) bit generators.
Reproducibility of rotation-candidate sampling and synthetic fixtures rests
on this.

Layout of one state: four 64-bit words filled from SplitMix64(seed).
Raw draws are 64-bit; uniforms take the top 53 bits, Gaussians come from
Box-Muller pairs.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 1.0 / (1 << 53)


def _splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Prng:
    """xoshiro256** stream over a 64-bit seed.

    Identical seed gives an identical draw sequence; `spawn` derives an
    independent child stream from a text label with a fixed mixing formula.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        s = self.seed
        state = []
        for _ in range(4):
            s, out = _splitmix64(s)
            state.append(out)
        # xoshiro256 state must not be all-zero; splitmix output never is
        # for all four words simultaneously, but guard anyway.
        if not any(state):
            state[0] = 0x9E3779B97F4A7C15
        self._s = state
        self._gauss_spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def gauss(self) -> float:
        """Standard normal via Box-Muller; draws two uniforms per pair."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        # u1 in (0, 1] to keep log() finite.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top bits."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        # Rejection zone keeps the draw exactly uniform.
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order of first selection."""
        if k > n:
            raise ValueError("cannot choose more indices than available")
        chosen: list[int] = []
        seen = set()
        while len(chosen) < k:
            i = self.below(n)
            if i not in seen:
                seen.add(i)
                chosen.append(i)
        return chosen

    def uniform_matrix(self, rows: int, cols: int, low: float, high: float) -> np.ndarray:
        span = high - low
        out = np.empty((rows, cols), dtype=np.float32)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = low + span * self.uniform()
        return out

    def gauss_matrix(self, rows: int, cols: int) -> np.ndarray:
        out = np.empty((rows, cols), dtype=np.float32)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = self.gauss()
        return out

    def spawn(self, label: str) -> "Prng":
        """Child stream keyed by label; stable across runs and platforms."""
        tag = zlib.crc32(label.encode("utf-8")) & 0xFFFFFFFF
        _, mixed = _splitmix64((self.seed ^ (tag * 0x9E3779B97F4A7C15)) & _MASK64)
        return Prng(mixed)
