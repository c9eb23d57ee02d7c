"""Counter-based random streams built on the splitmix64 finalizer.

The uniform stream is fully specified so that independent implementations
agree bit for bit:

* ``mix(x)`` is the splitmix64 output function::

      x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
      x = (x ^ (x >> 27)) * 0x94D049BB133111EB
      x =  x ^ (x >> 31)

  with all arithmetic modulo 2**64.
* A stream is keyed by ``key = mix(seed + mix((stream_id + 1) * G))`` where
  ``G = 0x9E3779B97F4A7C15``.
* The i-th raw word (i = 0, 1, ...) is ``mix(key + (i + 1) * G)``.
* Uniforms are ``(word >> 11) * 2**-53`` in [0, 1).
* Normals use Box-Muller on consecutive uniform pairs ``(u1, u2)``:
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``. An odd request discards the last sine.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(x: int) -> int:
    """Scalar splitmix64 finalizer on a Python int."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def derive_key(seed: int, stream_id: int) -> int:
    return mix64((seed + mix64(((stream_id + 1) * GOLDEN) & MASK64)) & MASK64)


class RngStream:
    """A deterministic generator identified by ``(seed, stream_id)``.

    Draws advance an internal counter, so the same sequence of calls always
    yields the same values. ``spawn`` derives child streams that are
    independent of the parent's counter.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id)
        self.key = derive_key(self.seed, self.stream_id)
        self.counter = 0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def spawn(self, stream_id: int) -> RngStream:
        """Child stream keyed by this stream's key and ``stream_id``."""
        return RngStream(self.key, stream_id)

    def words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix_array(np.uint64(self.key) + idx * np.uint64(GOLDEN))

    def uniform(self, size=None) -> np.ndarray | float:
        shape = () if size is None else np.atleast_1d(size).astype(int)
        n = int(np.prod(shape))
        u = (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(tuple(shape))

    def normal(self, size=None, dtype=np.float64) -> np.ndarray | float:
        shape = () if size is None else tuple(np.atleast_1d(size).astype(int))
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        if size is None:
            return float(z[0])
        return z.reshape(shape).astype(dtype, copy=False)

    def integers(self, high: int, size=None) -> np.ndarray | int:
        u = self.uniform(size)
        if size is None:
            return int(u * high)
        return np.minimum((u * high).astype(np.int64), high - 1)

    def bernoulli(self, p: float, size=None) -> np.ndarray | bool:
        u = self.uniform(size)
        return u < p

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def rng_stream(seed: int, stream_id: int = 0) -> RngStream:
    return RngStream(seed, stream_id)
