"""
Seeded random generators shared by every stochastic stage.
"""
import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """numpy Generator over the PCG64 bit generator, seeded with `seed`."""
    return np.random.Generator(np.random.PCG64(seed))
