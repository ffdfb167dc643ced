"""One global seed fanned out into independent per-component streams."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Stable 32-bit child seed for ``label`` under ``seed``.

    The label is hashed with CRC-32 (stable across processes, unlike ``hash``)
    and both numbers are mixed through numpy's ``SeedSequence``.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    state = np.random.SeedSequence([seed, zlib.crc32(label.encode("utf-8"))]).generate_state(1)
    return int(state[0])
