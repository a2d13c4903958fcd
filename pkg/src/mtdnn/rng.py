"""Seeded random streams.

All randomness flows from one 64-bit seed through numpy's counter-based
Philox generator. Each purpose gets its own stream, keyed by the seed, a
purpose tag and optional integer counters (epoch, step, ...), so a stream
can be recreated from its key alone when resuming.
"""
import numpy as np

PURPOSES = {"init": 1, "dropout": 2, "shuffle": 3, "sampling": 4, "data": 5, "check": 6}

_SEED_MASK = (1 << 64) - 1


def stream(seed, purpose, *counters):
    """Return an independent generator for ``(seed, purpose, *counters)``."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown rng purpose {purpose!r}")
    seed = int(seed) & _SEED_MASK
    key = (PURPOSES[purpose],) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def split_seed(seed):
    """Split a 64-bit seed into two exactly representable float halves."""
    seed = int(seed) & _SEED_MASK
    return float(seed >> 32), float(seed & 0xFFFFFFFF)


def join_seed(hi, lo):
    return (int(hi) << 32) | int(lo)
