"""Integer apportionment via largest-remainder rounding."""

from __future__ import annotations

import numpy as np


def largest_remainder(total: int, fractions, minimum: int = 0) -> np.ndarray:
    """Split ``total`` into integer parts proportional to ``fractions``.

    Parts always sum exactly to ``total`` and each part receives at least
    ``minimum``. Remainder ties resolve to the lowest index, so the result is
    fully deterministic.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size == 0:
        raise ValueError("fractions must be a nonempty 1-D sequence")
    if np.any(fr < 0):
        raise ValueError("fractions must be nonnegative")
    s = fr.sum()
    if s <= 0:
        raise ValueError("fractions must have positive sum")
    if total < 0:
        raise ValueError("total must be nonnegative")
    if minimum * int(fr.size) > total:
        raise ValueError(
            f"total {total} too small to give {fr.size} parts at least {minimum} each"
        )

    quota = fr / s * total
    parts = np.floor(quota).astype(np.int64)
    remainder = quota - parts
    deficit = total - int(parts.sum())
    # -remainder sorts descending; stable keeps index order on ties.
    order = np.argsort(-remainder, kind="stable")
    parts[order[:deficit]] += 1

    # Enforce the floor by taking from the currently largest parts.
    while True:
        short = np.flatnonzero(parts < minimum)
        if short.size == 0:
            break
        donor = int(np.argmax(parts))
        parts[donor] -= 1
        parts[short[0]] += 1

    assert int(parts.sum()) == total
    return parts
