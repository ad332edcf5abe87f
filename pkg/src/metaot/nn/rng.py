"""Seeded, counter-based random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``; none
touches global state. Streams are Philox generators keyed by
``(seed, *stream_ids)`` so independent consumers never share a sequence.
"""
import zlib

import numpy as np


def _key(s):
    return zlib.crc32(s.encode()) if isinstance(s, str) else int(s) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed, *stream):
    """Philox generator for ``seed``; ``stream`` entries may be ints or names."""
    seq = np.random.SeedSequence([_key(seed), *[_key(s) for s in stream]])
    return np.random.Generator(np.random.Philox(seq))


def truncated_normal(rng, shape, std=1.0, bound=2.0, dtype=np.float32):
    """Normal samples rejected outside ``[-bound, bound]`` standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(dtype)
