"""Addressable Gaussian increments.

Every stream (one per path) and every absolute time-step index ``j`` maps to a
fixed set of ``m`` standard normals, regardless of how paths are chunked
across workers or which sub-interval of time is requested.  Streams are
grouped in lanes of ``GROUP_SIZE``; each (side, group, block) triple, with
blocks of ``BLOCK_STEPS`` steps, seeds its own SFC64 generator through
``SeedSequence`` spawn keys.  Steps ``j >= 0`` belong to the forward Brownian motion,
steps ``j < 0`` to an independent backward one (two-sided Wiener process).
"""

from __future__ import annotations

import hashlib

import numpy as np

GROUP_SIZE = 128
BLOCK_STEPS = 1024


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 63-bit sub-seed from a master seed and a label."""
    digest = hashlib.sha256(f"{int(master_seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _block(seed: int, side: int, group: int, block: int, m: int) -> np.ndarray:
    """Standard normals of shape ``(BLOCK_STEPS, GROUP_SIZE, m)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(side, int(group), int(block)))
    return np.random.Generator(np.random.SFC64(ss)).standard_normal((BLOCK_STEPS, GROUP_SIZE, m))


class NoiseSource:
    """Gaussian increments ``sqrt(dt) * Z`` addressed by (stream, step index).

    Parameters
    ----------
    seed : int
        Master seed of the noise field.
    m : int
        Noise dimension.
    dt : float
        Step size; increments over step ``j`` cover ``[j dt, (j + 1) dt]``.
    """

    def __init__(self, seed: int, m: int, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.seed = int(seed)
        self.m = int(m)
        self.dt = float(dt)
        self._sqrt_dt = float(np.sqrt(dt))

    def normals(self, streams, j0: int, j1: int) -> np.ndarray:
        return self._assemble(streams, j0, j1, 1.0)

    def increments(self, streams, j0: int, j1: int) -> np.ndarray:
        """Wiener increments for steps ``j0 <= j < j1``, shape ``(j1 - j0, len(streams), m)``."""
        return self._assemble(streams, j0, j1, self._sqrt_dt)

    def _assemble(self, streams, j0: int, j1: int, scale: float) -> np.ndarray:
        """Standard normals for steps ``j0 <= j < j1``, shape ``(j1 - j0, len(streams), m)``.

        Backward steps (``j < 0``) carry the sign flip of a time-reversed
        Brownian motion: the increment over ``[j dt, (j+1) dt]`` is minus the
        backward motion's increment over ``[(-j-1) dt, -j dt]``.
        """
        streams = np.asarray(streams, dtype=np.int64).reshape(-1)
        if np.any(streams < 0):
            raise ValueError("stream ids must be nonnegative")
        n = streams.size
        out = np.empty((max(j1 - j0, 0), n, self.m))
        if j1 <= j0 or n == 0:
            return out
        groups = streams // GROUP_SIZE
        lanes = streams % GROUP_SIZE
        uniq, inverse = np.unique(groups, return_inverse=True)
        if j0 >= 0:
            return self._side_range(0, uniq, inverse, lanes, j0, j1, scale)
        if j0 < 0:
            lo, hi = j0, min(j1, 0)
            # backward index i = -j - 1 runs from -lo - 1 down to -hi
            i_lo, i_hi = -hi, -lo
            seg = self._side_range(1, uniq, inverse, lanes, i_lo, i_hi, scale)
            out[: hi - lo] = -seg[::-1]
        if j1 > 0:
            lo = max(j0, 0)
            out[lo - j0 :] = self._side_range(0, uniq, inverse, lanes, lo, j1, scale)
        return out

    def _side_range(self, side, uniq, inverse, lanes, i0, i1, scale):
        res = np.empty((i1 - i0, lanes.size, self.m))
        b0, b1 = i0 // BLOCK_STEPS, (i1 - 1) // BLOCK_STEPS
        for b in range(b0, b1 + 1):
            s0 = max(i0, b * BLOCK_STEPS)
            s1 = min(i1, (b + 1) * BLOCK_STEPS)
            for gi, g in enumerate(uniq):
                sel = np.nonzero(inverse == gi)[0]
                blk = _block(self.seed, side, int(g), b, self.m)[s0 - b * BLOCK_STEPS : s1 - b * BLOCK_STEPS]
                k = sel.size
                if sel[-1] - sel[0] == k - 1 and lanes[sel[0]] == 0 and lanes[sel[-1]] == k - 1:
                    # contiguous run of streams covering lanes 0..k-1 in order
                    np.multiply(blk[:, :k], scale, out=res[s0 - i0 : s1 - i0, sel[0] : sel[0] + k])
                else:
                    res[s0 - i0 : s1 - i0, sel] = scale * blk[:, lanes[sel]]
        return res
