"""Named random substreams derived from one root seed.

Every random draw in the toolkit flows through substream(root, name), so
re-running one stage (say, noise generation) never perturbs another
(say, ascent jitter), while a single root seed pins the whole run.
"""

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF] + list(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))
