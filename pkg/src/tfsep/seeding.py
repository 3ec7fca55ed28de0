"""Deterministic RNG streams derived from a single experiment seed.

Every stochastic component (parameter init, chunk shuffling, dropout,
clustering restarts) draws from its own named stream so that runs are
reproducible end to end and resumable mid-training without serializing
generator state.
"""

import zlib

import numpy as np


def stream_rng(seed, label):
    """Independent generator for the (seed, label) pair.

    Same pair -> same stream, on every platform (PCG64 is portable).
    """
    return np.random.default_rng([int(seed) & 0x7FFFFFFFFFFFFFFF, _label_key(label)])


def derive_seed(seed, label):
    """Stable integer sub-seed for components that take a plain seed."""
    return (int(seed) * 1000003 + _label_key(label)) & 0x7FFFFFFFFFFFFFFF


def _label_key(label):
    return zlib.crc32(label.encode("utf-8"))
