"""Digests and hash-chain checks shared by both pipelines."""
from __future__ import annotations

import hashlib
import json
from typing import Any, Sequence

ZERO_DIGEST = "0" * 16


def canonical_bytes(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def digest(obj: Any) -> str:
    """64-bit BLAKE2b digest of the canonical JSON form, as 16 hex chars."""
    return hashlib.blake2b(canonical_bytes(obj), digest_size=8).hexdigest()


def broken_links(blocks: Sequence[Any]) -> list[int]:
    """Indices ``i`` whose ``prev_hash`` does not match the recomputed hash of block ``i-1``.

    Blocks need ``prev_hash`` and a ``hash()`` method; block 0 must carry the zero digest.
    """
    bad = []
    for i, block in enumerate(blocks):
        expected = ZERO_DIGEST if i == 0 else blocks[i - 1].hash()
        if block.prev_hash != expected:
            bad.append(i)
    return bad
