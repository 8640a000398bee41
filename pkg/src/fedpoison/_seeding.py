"""Deterministic seed derivation.

Every random stream in the package is keyed by a tuple of non-negative
integers fed to ``numpy.random.SeedSequence``, so results never depend on
call order or on which worker executes a task.
"""

import numpy as np

# stream tags, kept stable so that reports stay reproducible across versions
HONEST_SELECT = 1
MALICIOUS_SELECT = 2
CLIENT_TRAIN = 3
ATTACK = 4
INIT = 5
PARTITION = 6
SPLIT = 7
SMOTE = 8


def rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into a single 63-bit integer seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
