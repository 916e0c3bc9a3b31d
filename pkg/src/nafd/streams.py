"""Labeled, splittable random streams.

A stream for ``(master_seed, *labels)`` is a PCG64 generator seeded by
``numpy.random.SeedSequence(entropy=master_seed, spawn_key=keys)`` where each
label maps to a 32-bit word: non-negative integers below 2**32 are used as
is, anything else (strings, larger ints) as the first four little-endian
bytes of its SHA-256 digest.  The derivation depends only on numpy's
documented SeedSequence and PCG64 algorithms, so it is platform independent.
"""

import hashlib

import numpy as np


def label_key(label):
    """32-bit word for one label."""
    if isinstance(label, (int, np.integer)) and 0 <= int(label) < 2 ** 32:
        return int(label)
    digest = hashlib.sha256(repr(label).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng_streams(master_seed, *labels):
    """Generator for ``(master_seed, *labels)``; equal inputs give equal streams.

    Parameters
    ----------
    master_seed : int
        Unsigned 64-bit seed.
    *labels : int or str
        Path of the stream, e.g. ``("mc", point_index, trial_index)``.

    Returns
    -------
    numpy.random.Generator
    """
    if not 0 <= int(master_seed) < 2 ** 64:
        raise ValueError("master seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=tuple(label_key(x) for x in labels))
    return np.random.Generator(np.random.PCG64(ss))


def trial_streams(master_seed, *labels):
    """Callable ``t -> generator`` for per-trial streams under ``labels``."""
    def get(t):
        return derive_rng_streams(master_seed, *labels, t)
    return get
