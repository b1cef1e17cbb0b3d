"""Small shared helpers: deterministic rounding and seeded RNG derivation."""

from __future__ import annotations

import math

import numpy as np


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero.

    Python's builtin round() ties to even, which would break the documented
    grid positions (e.g. 412.5 must become 413, not 412).
    """
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def derive_rng(seed: int, *branch: int) -> np.random.Generator:
    """Independent generator for (seed, branch...) that is stable across runs.

    Branch integers keep per-class / per-fold / per-image streams decoupled so
    reordering one loop never perturbs another.  The branch count is folded
    into the key because SeedSequence zero-pads entropy: without it,
    (seed,) and (seed, 0) would alias the same stream.
    """
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, len(branch), *branch])
    )
