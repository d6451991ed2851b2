"""Seed derivation: one master seed, independent streams per purpose."""
import hashlib

import numpy as np


def derive_seed(master: int, *tags) -> int:
    """Hash ``(master, *tags)`` into a 63-bit seed."""
    text = "/".join([str(int(master))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def derive_rng(master: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))
