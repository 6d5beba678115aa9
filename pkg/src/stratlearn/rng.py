"""Seed splitting.

Every random stage draws from its own stream, derived from one root seed as
``SeedSequence([root, crc32(stage), index])`` and fed to PCG64. Streams do not
depend on the order in which work is scheduled, so threaded and serial runs
give the same numbers.
"""

import zlib

import numpy as np

_MASK = (1 << 63) - 1


def seed_sequence(root, stage="", index=0):
    return np.random.SeedSequence(
        [int(root) & _MASK, zlib.crc32(stage.encode("utf-8")), int(index)]
    )


def derive_rng(root, stage="", index=0):
    """Generator for sub-stream ``(stage, index)`` of ``root``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root, stage, index)))


def derive_seed(root, stage="", index=0):
    """Integer seed for a sub-stream, for APIs that take plain ints."""
    return int(seed_sequence(root, stage, index).generate_state(1, np.uint64)[0] & _MASK)
