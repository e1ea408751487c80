"""Mixed-radix conversion between joint and per-agent local indices.

Agent 1 (position 0) is the most significant digit, so the joint index
of locals (t_1, ..., t_n) with sizes (m_1, ..., m_n) is
t_1 * m_2 * ... * m_n + t_2 * m_3 * ... * m_n + ... + t_n.  This order is
fixed so serialized MDPs are portable across implementations.
"""

from __future__ import annotations

import math
from typing import Sequence


def compose_index(locals_: Sequence[int], sizes: Sequence[int]) -> int:
    """Encode a tuple of local indices into a single joint index."""
    if len(locals_) != len(sizes):
        raise IndexError(f"got {len(locals_)} locals for {len(sizes)} sizes")
    joint = 0
    for t, m in zip(locals_, sizes):
        if not 0 <= t < m:
            raise IndexError(f"local index {t} out of range for size {m}")
        joint = joint * m + t
    return joint


def decompose_index(joint: int, sizes: Sequence[int]) -> tuple[int, ...]:
    """Decode a joint index into its tuple of local indices."""
    total = math.prod(sizes)
    if not 0 <= joint < total:
        raise IndexError(f"joint index {joint} out of range for product {total}")
    out = [0] * len(sizes)
    for pos in range(len(sizes) - 1, -1, -1):
        joint, out[pos] = divmod(joint, sizes[pos])
    return tuple(out)


def local_index_table(sizes: Sequence[int]) -> list[tuple[int, ...]]:
    """All local tuples in joint-index order (joint index j -> tuple)."""
    return [decompose_index(j, sizes) for j in range(math.prod(sizes))]
