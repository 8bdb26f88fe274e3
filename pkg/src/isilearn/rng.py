"""Deterministic, splittable random streams.

Every stochastic quantity in a run (training symbols, training noise, sync
probes, evaluation streams, ...) draws from its own counter-based Philox
stream keyed by (master seed, stream id, extra indices).  Streams are
independent by construction, so train/eval never share randomness for the
same master seed and parallel workers can be given disjoint keys.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    TRAIN_SYMBOLS = 1
    TRAIN_NOISE = 2
    SYNC_PROBE = 3
    CALIBRATION = 4
    EVAL_SYMBOLS = 5
    EVAL_NOISE = 6
    SCREEN_SYMBOLS = 7
    SCREEN_NOISE = 8
    DIAGNOSTIC = 9


def stream_rng(master_seed: int, stream: int, *indices: int) -> np.random.Generator:
    """Generator for one named stream. Same key, same sequence, always."""
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    entropy = (int(master_seed), int(stream)) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
