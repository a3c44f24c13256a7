"""Counter-based random streams keyed by ``(master_seed, index, purpose)``.

A stream depends only on its key, so ensembles are reproducible regardless
of how trajectories are chunked or ordered across workers.
"""

import numpy as np

MEASUREMENT = 0
COMMON = 1
PHASE = 2
BOOTSTRAP = 3


def stream(master_seed: int, index: int, purpose: int = MEASUREMENT) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


class WienerSource:
    """Wiener increments for a block of independent streams.

    ``refine`` draws each increment as the sum of ``refine`` finer ones, so a
    run at ``(dt, refine=2)`` sees exactly the Brownian path of a run at
    ``(dt/2, refine=1)`` with the same keys.
    """

    def __init__(self, generators, n_channels, dt, refine=1, chunk=512):
        self.gens = list(generators)
        self.n_channels = int(n_channels)
        self.dt = float(dt)
        self.refine = int(refine)
        self.chunk = int(chunk)
        self._buf = None
        self._pos = 0

    def _fill(self):
        r = self.refine
        draws = np.stack(
            [g.standard_normal((self.chunk * r, self.n_channels)) for g in self.gens], axis=-1
        )  # (chunk*r, channels, B)
        draws = draws.reshape(self.chunk, r, self.n_channels, len(self.gens)).sum(axis=1)
        self._buf = draws * np.sqrt(self.dt / r)
        self._pos = 0

    def next(self) -> np.ndarray:
        """Increments for one step, shape ``(channels, B)``."""
        if self._buf is None or self._pos >= self.chunk:
            self._fill()
        out = self._buf[self._pos]
        self._pos += 1
        return out
