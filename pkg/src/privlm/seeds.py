"""Labeled seed derivation so one master seed reproduces every stage."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 63-bit seed from a master seed and a label path.

    Stable across platforms and Python versions (sha256 of the textual path),
    so parallel and serial generation of per-item seeds agree bit for bit.
    """
    path = "/".join([str(int(master))] + [str(l) for l in labels])
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
