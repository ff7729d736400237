"""Seeded random streams.

All randomness uses ``numpy.random.Philox`` keyed by
``SeedSequence([seed, *counter])``. Philox is counter-based, so each named
stream (a tuple of small integers) is reproducible on any platform and
independent of the order in which streams are created.
"""
import numpy as np


def make_rng(seed, *counter):
    """Generator for stream ``counter`` of a 64-bit ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, counter)])
    return np.random.Generator(np.random.Philox(ss))
