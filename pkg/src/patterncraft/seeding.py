"""Deterministic child seeds derived from a master seed plus integer keys."""
from __future__ import annotations

import numpy as np


def child_rng(master_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]]))


def child_seed(master_seed: int, *keys: int) -> int:
    seq = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(seq.generate_state(1)[0])
