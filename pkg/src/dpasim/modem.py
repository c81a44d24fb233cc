"""PSK alphabets, Gray labelling and bit partitions.

Symbol ``i`` (0-based) of an ``order``-PSK alphabet sits at angle
``pi * (2 * (i + 1) + 1) / order``. Gray words are assigned
counterclockwise starting from the symbol with the smallest nonnegative
angle, using the reflected binary code. Bits are serialized MSB first.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PskAlphabet:
    order: int
    symbols: np.ndarray = field(repr=False)

    @property
    def bits_per_symbol(self) -> int:
        return int(self.order).bit_length() - 1

    @property
    def symbol_power(self) -> float:
        return 1.0

    def rotation_index(self, index, steps: int = 1):
        """Index of ``symbols[index] * exp(2j*pi*steps/order)``."""
        return (np.asarray(index) + steps) % self.order


@dataclass(frozen=True)
class GrayMap:
    forward: np.ndarray  # word -> symbol index
    inverse: np.ndarray  # symbol index -> word
    bits_per_symbol: int

    def index_bits(self) -> np.ndarray:
        """(order, M) table of the bits of each symbol index, MSB first."""
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (self.inverse[:, None] >> shifts) & 1


@dataclass(frozen=True)
class BitPartition:
    """``sets[i][b]``: symbol indices whose bit ``i`` (MSB first) equals ``b``."""

    sets: tuple

    def zeros(self, i: int) -> np.ndarray:
        return self.sets[i][0]

    def ones(self, i: int) -> np.ndarray:
        return self.sets[i][1]

    def __len__(self) -> int:
        return len(self.sets)


def is_power_of_two(n) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def make_psk_alphabet(order: int) -> PskAlphabet:
    if not is_power_of_two(order) or not 2 <= order <= 64:
        raise ValueError(f"PSK order must be a power of two in [2, 64], got {order!r}")
    order = int(order)
    i = np.arange(order)
    symbols = np.exp(1j * np.pi * (2 * (i + 1) + 1) / order)
    symbols.setflags(write=False)
    return PskAlphabet(order=order, symbols=symbols)


def build_gray_map(alphabet: PskAlphabet) -> GrayMap:
    order = alphabet.order
    position = np.arange(order)
    # the smallest nonnegative angle pi/order belongs to index order-1
    index_at_position = (order - 1 + position) % order
    words = position ^ (position >> 1)
    forward = np.empty(order, dtype=np.int64)
    forward[words] = index_at_position
    inverse = np.empty(order, dtype=np.int64)
    inverse[index_at_position] = words
    forward.setflags(write=False)
    inverse.setflags(write=False)
    return GrayMap(forward=forward, inverse=inverse, bits_per_symbol=alphabet.bits_per_symbol)


def bit_partitions(alphabet: PskAlphabet, gray: GrayMap) -> BitPartition:
    bits = gray.index_bits()
    sets = []
    for i in range(gray.bits_per_symbol):
        sets.append((np.flatnonzero(bits[:, i] == 0), np.flatnonzero(bits[:, i] == 1)))
    return BitPartition(sets=tuple(sets))


def modulate(bits, alphabet: PskAlphabet, gray: GrayMap) -> np.ndarray:
    """Map a bit sequence (last axis) to symbol indices, M bits per symbol.

    Leading axes are kept, so a ``(..., n)`` bit array gives ``(..., n / M)``
    indices.
    """
    bits = np.asarray(bits, dtype=np.int64)
    m = alphabet.bits_per_symbol
    if bits.shape[-1] % m:
        raise ValueError(f"bit length {bits.shape[-1]} is not a multiple of {m}")
    groups = bits.reshape(bits.shape[:-1] + (bits.shape[-1] // m, m))
    weights = 1 << np.arange(m - 1, -1, -1)
    words = groups @ weights
    return gray.forward[words]


def demodulate_indices(indices, gray: GrayMap) -> np.ndarray:
    """Inverse of :func:`modulate`: symbol indices back to bits."""
    indices = np.asarray(indices, dtype=np.int64)
    bits = gray.index_bits()[indices]
    return bits.reshape(indices.shape[:-1] + (-1,)) if indices.ndim else bits
