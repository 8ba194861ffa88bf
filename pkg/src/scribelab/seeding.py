"""Deterministic seed fan-out.

Every source of randomness in the pipeline derives from a single root seed
plus a fixed string label, so whole runs are reproducible and stages stay
independent of each other's RNG consumption.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, label: str) -> int:
    """Map (root_seed, label) to a stable 63-bit seed."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(root_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, label))
