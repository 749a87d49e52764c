"""Binary containers shared by the store and the model checkpoints.

Matrix file: 8-byte magic, u32 rows, u32 cols, then row-major little-endian
float32 payload. Edge file: 8-byte magic, u32 count, then (src, dst) pairs of
little-endian u32. Manifests are plain ``key=value`` text files.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError

MATRIX_MAGIC = b"WHINMAT1"
EDGE_MAGIC = b"WHINEDG1"


def write_matrix(path, matrix):
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise FormatError(f"matrix files hold 2-D arrays, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(np.array(matrix.shape, dtype="<u4").tobytes())
        fh.write(matrix.tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated header")
        rows, cols = np.frombuffer(header, dtype="<u4")
        payload = fh.read()
    expected = int(rows) * int(cols) * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(int(rows), int(cols)).copy()


def write_edges(path, pairs):
    pairs = np.ascontiguousarray(pairs, dtype="<u4")
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise FormatError(f"edge files hold (n, 2) arrays, got shape {pairs.shape}")
    with open(path, "wb") as fh:
        fh.write(EDGE_MAGIC)
        fh.write(np.array([pairs.shape[0]], dtype="<u4").tobytes())
        fh.write(pairs.tobytes())


def read_edges(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != EDGE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(4)
        if len(header) != 4:
            raise FormatError(f"{path}: truncated header")
        count = int(np.frombuffer(header, dtype="<u4")[0])
        payload = fh.read()
    if len(payload) != count * 8:
        raise FormatError(f"{path}: expected {count * 8} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<u4").reshape(count, 2).astype(np.int64)


def write_manifest(path, entries):
    """Write an ordered mapping as key=value lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path):
    if not os.path.exists(path):
        raise FormatError(f"missing manifest {path}")
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            entries[key] = value
    return entries
