"""Prefix sums modulo two."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def prefix_sum_target(bits) -> np.ndarray:
    """Cumulative parity along the last axis."""
    arr = np.asarray(bits)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("prefix_sum_target: entries must be 0 or 1")
    return (np.cumsum(arr.astype(np.int64), axis=-1) % 2).astype(np.uint8)


@dataclass(frozen=True)
class BitStringInstance:
    bits: np.ndarray
    target: np.ndarray

    @classmethod
    def from_bits(cls, bits) -> "BitStringInstance":
        b = np.asarray(bits, dtype=np.uint8)
        return cls(b, prefix_sum_target(b))


def random_bit_strings(length: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if length < 1 or count < 1:
        raise ValueError(f"length and count must be >= 1 (got length={length}, count={count})")
    return rng.integers(0, 2, size=(count, length), dtype=np.uint8)


def encode_bits(bits: np.ndarray) -> np.ndarray:
    """(count, L) bits -> (count, L, 1) float32 network input."""
    return np.asarray(bits, dtype=np.float32)[..., None]
