"""Per-sample random streams.

Every walker/trajectory owns a Philox (counter-based) stream keyed by
``(base_seed, index)``, so a sample's history does not depend on how the
ensemble is chunked or scheduled.
"""

from __future__ import annotations

import math

import numpy as np


def stream(base_seed, index):
    seq = np.random.SeedSequence([int(base_seed), int(index)])
    return np.random.Generator(np.random.Philox(seq))


class CollapseStream:
    """Draw protocol shared by CTRW walkers and jump trajectories.

    Order per sample: optional component pick, first waiting time, then for
    every jump three uniforms (node, x-jitter, p-jitter) followed by the next
    waiting time.
    """

    def __init__(self, base_seed, index):
        self.gen = stream(base_seed, index)

    def component(self, weights):
        if len(weights) == 1:
            return 0
        u = self.gen.random()
        cdf = np.cumsum(weights)
        return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(weights) - 1))

    def wait(self, tau):
        # inverse transform of Exp(tau)
        return -tau * math.log1p(-self.gen.random())

    def jump_uniforms(self):
        return self.gen.random(3)
