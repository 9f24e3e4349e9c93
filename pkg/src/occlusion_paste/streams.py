import numpy as np


def substream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for work item ``index``.

    Each item gets its own Philox stream keyed by ``(seed, index)``, so results
    do not depend on how items are spread over workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
