"""Splittable seeded random streams and Latin hypercube sampling.

A stream is an immutable handle ``(master_seed, path)``.  Its internal seed is
the first 32 bytes of ``sha256(master_seed || 0x1f-joined path)`` fed to
numpy's Philox counter-based generator.  Distinct paths collide only if
SHA-256 collides (probability ~2^-128 for any pair).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

#: Pinned in every frozen config; bumping it invalidates cached artifacts.
RNG_ALGORITHM = "philox4x64-sha256path-v1"

_SEP = "\x1f"


class InvalidBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    path: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")

    @property
    def seed_bytes(self) -> bytes:
        h = hashlib.sha256(self.master_seed.to_bytes(8, "little"))
        h.update(_SEP.join(self.path).encode("utf-8"))
        return h.digest()

    @property
    def seed64(self) -> int:
        """A 64-bit integer digest of the stream, for kernels that run their own PRNG."""
        return int.from_bytes(self.seed_bytes[:8], "little")

    def derive(self, label: str) -> "RngStream":
        return RngStream(self.master_seed, self.path + (str(label),))

    def generator(self) -> np.random.Generator:
        """Fresh private cursor; every call restarts the stream from its beginning."""
        key = int.from_bytes(self.seed_bytes[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))

    def __str__(self):
        return f"{self.master_seed}:" + "/".join(self.path)


def derive_stream(parent: RngStream, label: str) -> RngStream:
    return parent.derive(label)


def lhs_sample(n: int, d: int, bounds, stream: RngStream) -> np.ndarray:
    """Plain Latin hypercube design of ``n`` points in the box ``bounds``.

    ``bounds`` is a ``(lower, upper)`` pair of scalars or length-``d`` arrays.
    Each column gets an independent stratum permutation and a uniform offset
    inside every stratum.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    lo = np.broadcast_to(np.asarray(bounds[0], dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(bounds[1], dtype=float), (d,))
    if np.any(lo >= hi):
        raise InvalidBoundsError(f"degenerate bounds: lower={lo}, upper={hi}")

    rng = stream.generator()
    strata = np.empty((n, d), dtype=np.int64)
    for j in range(d):
        strata[:, j] = rng.permutation(n)
    offsets = rng.random((n, d))
    # edges computed as lo + k (hi - lo) / n so membership tests agree bit for bit
    left = lo + strata * (hi - lo) / n
    right = lo + (strata + 1) * (hi - lo) / n
    x = left + offsets * (right - left)
    # rounding may land exactly on the upper stratum edge
    return np.clip(x, left, np.nextafter(right, -np.inf))
