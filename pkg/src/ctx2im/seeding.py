"""Hierarchical seed derivation.

Every command takes one root seed; all subsystems draw from generators
seeded by folding string labels into that root. Changing how one
subsystem consumes randomness therefore never perturbs another's stream,
and any intermediate artifact is reproducible from (root seed, label
path) alone.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_MASK63 = (1 << 63) - 1


def fold_seed(root: int, *labels: int | str) -> int:
    """Derive a child seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for part in labels:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little") & _MASK63


def torch_gen(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) & _MASK63)
    return g


def np_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & _MASK63)
