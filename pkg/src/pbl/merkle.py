"""Merkle roots over ordered lists of byte strings.

Leaf nodes are SHA-256 of the leaf bytes, parents are SHA-256 of the
concatenated children, and an odd node count at any level duplicates the
last node. The empty list maps to the all-zero digest, matching the
sentinel used for blocks with no content.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def merkle_root(leaves: Sequence[bytes] | Iterable[bytes]) -> bytes:
    level = [sha256(leaf) for leaf in leaves]
    if not level:
        return ZERO_DIGEST
    # The duplication rule applies at the leaf level too: a single leaf is
    # paired with itself rather than promoted directly to the root.
    first = True
    while len(level) > 1 or first:
        first = False
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]
