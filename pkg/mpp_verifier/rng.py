"""
Counter-based random streams.

Every path gets its own Philox stream keyed by the master seed, with the
path index placed in the high words of the 256-bit counter. Draw number d
of path i is therefore a pure function of (master_seed, i, d) -- the same
whatever the worker count or scheduling order.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1

# Separates the purposes a master seed is used for.
STREAM_PATHS = 0
STREAM_BATTERY = 1


def derive_key(master_seed: int, purpose: int = STREAM_PATHS) -> np.ndarray:
    """128-bit Philox key from a user seed (any nonnegative int)."""
    if master_seed < 0:
        raise ValueError(f"master seed must be >= 0, got {master_seed}")
    digest = hashlib.sha256(f"mpp_verifier:{purpose}:{master_seed}".encode("ascii")).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


def stream(master_seed: int, index: int, purpose: int = STREAM_PATHS) -> np.random.Generator:
    """Independent generator for (master_seed, index)."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    counter = np.array([0, 0, index & _MASK64, (index >> 64) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, purpose),
                                                counter=counter))
