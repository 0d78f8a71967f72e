"""Seeded random streams.

Every stream is numpy's ``Generator`` over the Philox4x64-10 bit generator:
a counter-based generator (Salmon et al., "Parallel random numbers: as easy
as 1, 2, 3") with a 256-bit counter, 128-bit key, 10 rounds, multipliers
0xD2E7470EE14C6C93 / 0xCA5A826395121157 and Weyl key increments
0x9E3779B97F4A7C15 / 0xBB67AE8584CAA73B.  The integer seed is expanded into
the key through ``numpy.random.SeedSequence``.
"""
import numpy as np


def make_rng(seed: int | None) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def child(rng: np.random.Generator) -> np.random.Generator:
    """Independent stream derived deterministically from ``rng``."""
    return make_rng(int(rng.integers(0, 2**63 - 1)))
