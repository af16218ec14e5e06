"""One root seed, deterministic per-stage child streams."""

import numpy as np

STAGES = ("init", "split", "sample")


def stage_rng(seed, stage):
    """Generator for a named pipeline stage, derived from the root seed.

    Stages draw from independent child streams so that, e.g., changing the
    batch sampler cannot perturb initialization.
    """
    idx = STAGES.index(stage)
    children = np.random.SeedSequence(seed).spawn(len(STAGES))
    return np.random.default_rng(children[idx])
