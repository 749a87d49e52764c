"""Named, reproducible random substreams derived from one master seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name):
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed, name):
    """A Generator whose stream depends only on (seed, name)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_name_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


def subseed(seed, name):
    """A derived integer seed, stable across runs and platforms."""
    digest = hashlib.blake2b(f"{int(seed)}:{name}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
