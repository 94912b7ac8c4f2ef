"""Deterministic seed derivation for nested sampling decisions.

Seeds are derived by hashing the repr of the provided parts, which is stable
across processes and Python versions for ints, strings, and tuples of them
(unlike ``hash``, which is randomized for strings).
"""

import hashlib
import random


def stable_seed(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stable_rng(*parts) -> random.Random:
    return random.Random(stable_seed(*parts))
