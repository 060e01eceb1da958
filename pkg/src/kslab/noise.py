"""Counter-based Gaussian increments shared by coupled stochastic systems.

Each (replication, step) pair owns a Philox counter block whose uint64
stream is a pure function of the master seed.  Double number k of that
stream belongs to particle k // d, so the increment of one particle never
depends on how many particles are in the block, on evaluation order, or on
thread count.  Coupled systems replay identical increments by consuming
identical keys.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_KEY_SALT = np.uint64(0x6B736C6162)  # domain separator for this stream family


def _uniform_open(raw):
    # top 53 bits, offset to the open interval (0, 1); 1 uint64 per double
    return (raw >> np.uint64(11)) * 2.0**-53 + 2.0**-54


class NoiseStream:
    """Reproducible standard-normal increments keyed by (replication, step, particle)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def _raw(self, replication: int, step: int, n_doubles: int, skip: int = 0):
        bg = np.random.Philox(
            counter=np.array([0, int(step), int(replication), 0], dtype=np.uint64),
            key=np.array([self.seed, _KEY_SALT], dtype=np.uint64),
        )
        raw = bg.random_raw(skip + n_doubles)
        return raw[skip:]

    def normals(self, replication: int, step: int, n: int, d: int):
        """Standard-normal block of shape (n, d); row i is particle i's draw."""
        u = _uniform_open(self._raw(replication, step, n * d))
        return ndtri(u).reshape(n, d)

    def particle_normals(self, replication: int, step: int, i: int, d: int):
        """Replay particle i's draw without generating the whole block."""
        u = _uniform_open(self._raw(replication, step, d, skip=i * d))
        return ndtri(u)


class PermutedNoise:
    """View of a stream with particle rows relabeled by a fixed permutation.

    Row i of this view is row perm[i] of the base stream; used to check
    exchangeability of particle systems under relabeling.
    """

    def __init__(self, base: NoiseStream, perm):
        self.base = base
        self.perm = np.asarray(perm, dtype=np.int64)

    def normals(self, replication: int, step: int, n: int, d: int):
        if n != len(self.perm):
            raise ValueError(f"block size {n} does not match the permutation length {len(self.perm)}")
        block = self.base.normals(replication, step, n, d)
        return block[self.perm]
