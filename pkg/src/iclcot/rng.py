"""Counter-based splittable random streams.

Every random draw in the package flows from a single 64-bit seed through
named streams (train/pool/eval/policy/...) and index-based splits, so any
stage can be replayed in isolation and parallel work never shares a stream.
The generator is Philox keyed by (seed, stream); normal variates use the
Box-Muller transform on Philox uniforms, which keeps the sample sequence
bit-identical across runs for a given (seed, stream).
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ContractError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def stream_for(name: str) -> int:
    """Stable 64-bit stream id for a named stage ("train", "eval", ...)."""
    digest = hashlib.blake2s(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngState:
    """One random stream: (seed, stream) fully determine the sample sequence.

    `split(i)` derives child streams that are disjoint from the parent and
    from each other, so e.g. evaluation trial i uses split(i) and stays
    independent of scheduling order. `draws` counts values taken so far.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.draws = 0
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, draws={self.draws})"

    def split(self, index: int) -> "RngState":
        """Child stream `index`; deterministic and disjoint from the parent."""
        child = _splitmix64(self.stream ^ _splitmix64((index + 1) & _MASK64))
        return RngState(self.seed, child)

    def named(self, name: str) -> "RngState":
        """Child stream derived from a stage name, mixed with this stream."""
        return RngState(self.seed, _splitmix64(self.stream ^ stream_for(name)))

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms in [0, 1), float64."""
        self.draws += n
        return self._gen.random(n)

    def normal(self, rows: int, cols: int | None = None) -> np.ndarray:
        """Standard-normal samples via Box-Muller, shape (rows,) or (rows, cols)."""
        n = rows if cols is None else rows * cols
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1], keeps log finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z if cols is None else z.reshape(rows, cols)

    def choice(self, probs: np.ndarray) -> int:
        """Draw an index from a probability vector by inverse CDF."""
        u = self.uniform(1)[0]
        cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
        return int(np.searchsorted(cdf, u * cdf[-1], side="right").clip(0, len(cdf) - 1))


def gaussian_sample(rng: RngState, rows: int, cols: int) -> np.ndarray:
    """(rows, cols) matrix of i.i.d. standard normals from `rng`."""
    if rows < 1 or cols < 1:
        raise ContractError(f"rows and cols must be >= 1, got ({rows}, {cols})")
    return rng.normal(rows, cols)
