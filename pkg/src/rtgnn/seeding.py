"""Named, independent random streams derived from a run seed."""

import hashlib

import numpy as np


def stream_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by ``(seed, name)``; adding new names never shifts existing streams."""
    return np.random.default_rng(stream_seed(seed, name))
