"""Helpers for fixed-width binary descriptors.

A descriptor is a packed ``uint8`` array of ``width // 8`` bytes.  All
functions assume the width is a multiple of 64 and identical for every
descriptor in a run; the default width is 256 bits.
"""

from __future__ import annotations

import numpy as np

DEFAULT_WIDTH = 256


def width_of(desc: np.ndarray) -> int:
    """Bit width of a packed descriptor (or of each row of a matrix)."""
    return int(desc.shape[-1]) * 8


def popcount(desc: np.ndarray) -> int:
    """Number of set bits in a single packed descriptor."""
    return int(np.bitwise_count(desc).sum())


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two packed descriptors of equal width."""
    if a.shape != b.shape:
        raise ValueError(f"descriptor width mismatch: {width_of(a)} vs {width_of(b)} bits")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_to_many(q: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Hamming distances from one descriptor to each row of a matrix."""
    if mat.shape[-1] != q.shape[-1]:
        raise ValueError(f"descriptor width mismatch: {width_of(q)} vs {width_of(mat)} bits")
    return np.bitwise_count(mat ^ q).sum(axis=1, dtype=np.int32)


def hamming_matrix(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """All-pairs Hamming distances between two descriptor matrices.

    Works on 64-bit views and in row chunks of ``a`` to bound the size of
    the XOR temporary.  Returns an ``(len(a), len(b))`` int32 matrix.
    """
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"descriptor width mismatch: {width_of(a)} vs {width_of(b)} bits")
    a64 = np.ascontiguousarray(a).view(np.uint64)
    b64 = np.ascontiguousarray(b).view(np.uint64)
    out = np.empty((len(a), len(b)), dtype=np.int32)
    for i in range(0, len(a), chunk):
        block = a64[i : i + chunk]
        out[i : i + chunk] = np.bitwise_count(block[:, None, :] ^ b64[None, :, :]).sum(
            axis=2, dtype=np.int32
        )
    return out


def random_descriptors(rng: np.random.Generator, n: int, width: int = DEFAULT_WIDTH) -> np.ndarray:
    """Uniformly random packed descriptors, shape ``(n, width // 8)``."""
    return rng.integers(0, 256, size=(n, width // 8), dtype=np.uint8)


def flip_random_bits(rng: np.random.Generator, descs: np.ndarray, count: int) -> np.ndarray:
    """Copy of ``descs`` with ``count`` distinct random bits flipped per row."""
    descs = np.atleast_2d(descs)
    n, nbytes = descs.shape
    width = nbytes * 8
    if count == 0:
        return descs.copy()
    if count > width:
        raise ValueError(f"cannot flip {count} bits in a {width}-bit descriptor")
    positions = rng.permuted(np.tile(np.arange(width), (n, 1)), axis=1)[:, :count]
    flips = np.zeros((n, width), dtype=np.uint8)
    np.put_along_axis(flips, positions, 1, axis=1)
    return descs ^ np.packbits(flips, axis=1)
