"""Counter-based random streams keyed by (seed, tag, index).

Every per-instance random decision draws from its own Philox stream, so the
result for instance ``i`` never depends on how many other instances were
processed before it, or on which thread processed them.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_key(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


def stream_key(seed: int, tag: str) -> tuple[int, int]:
    return (int(seed) & _MASK64, tag_key(tag))


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, tag, index) triple.

    The index occupies the top counter word, leaving 2**192 blocks per stream
    before two indices could overlap.
    """
    if index < 0:
        raise ValueError("stream index must be non-negative")
    key = np.array(stream_key(seed, tag), dtype=np.uint64)
    counter = np.array([0, 0, 0, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
