"""Deterministic token embeddings: text -> token vectors -> mean-pooled entity vector.

The default provider derives each token's vector from a keyed hash, so the
same (token, seed, dim) always yields the same row on every platform. A file
provider with the identical interface can serve externally precomputed
vectors instead.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

UNKNOWN_TOKEN = "<unk>"


@dataclass(frozen=True)
class EmbedderConfig:
    dim: int = 32
    max_tokens: int = 128
    hash_seed: int = 0
    provider: str = "hashed"  # "hashed" | "file"
    vector_file: str | None = None

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.provider not in ("hashed", "file"):
            raise ValueError(f"unknown provider {self.provider!r}")
        if self.provider == "file" and not self.vector_file:
            raise ValueError("file provider needs vector_file")


def tokenize(text, max_tokens=128):
    """Lowercase, split on non-alphanumeric runs, keep the first max_tokens."""
    return _TOKEN_RE.findall(text.lower())[:max_tokens]


def _hashed_row(token, seed, dim):
    need = dim * 4
    chunks = []
    counter = 0
    while need > 0:
        h = hashlib.blake2b(f"{seed}:{counter}:{token}".encode("utf-8"), digest_size=64)
        chunks.append(h.digest())
        need -= 64
        counter += 1
    raw = np.frombuffer(b"".join(chunks)[: dim * 4], dtype="<u4")
    unit = raw.astype(np.float64) / 2.0**32  # [0, 1)
    return ((unit * 2.0 - 1.0) / np.sqrt(dim)).astype(np.float32)


class TokenEmbedder:
    """Maps token sequences to vector matrices under a fixed config."""

    def __init__(self, config=EmbedderConfig()):
        self.config = config
        self._cache = {}
        self._table = None
        if config.provider == "file":
            self._table = self._load_table(config.vector_file, config.dim)

    @staticmethod
    def _load_table(path, dim):
        table = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}:{lineno}: expected token + {dim} values, got {len(parts) - 1}")
                table[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float32)
        return table

    def _row(self, token):
        row = self._cache.get(token)
        if row is not None:
            return row
        if self._table is not None:
            row = self._table.get(token)
            if row is None:
                row = self._table.get(UNKNOWN_TOKEN)
            if row is None:
                row = np.zeros(self.config.dim, dtype=np.float32)
        else:
            row = _hashed_row(token, self.config.hash_seed, self.config.dim)
        self._cache[token] = row
        return row

    def token_vectors(self, tokens):
        """One row per token, in order; shape (len(tokens), dim)."""
        if not tokens:
            return np.zeros((0, self.config.dim), dtype=np.float32)
        return np.stack([self._row(t) for t in tokens])

    def entity_embedding(self, tokens):
        """Mean of the token rows; an empty sequence pools to the zero vector."""
        if not tokens:
            logger.warning("entity with no tokens: using zero embedding")
            return np.zeros(self.config.dim, dtype=np.float32)
        return self.token_vectors(tokens).mean(axis=0)

    def embed_text(self, text):
        return self.entity_embedding(tokenize(text, self.config.max_tokens))
