"""Finite signal constellations and per-user vector alphabets.

A :class:`Constellation` is a normalized (unit average energy, zero mean)
set of complex symbol amplitudes.  A :class:`VectorAlphabet` is the
``n_t``-fold Cartesian product of a constellation: the set of candidate
transmit vectors of one user, enumerated by index without ever being
materialized in full.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConstellationKind",
    "Constellation",
    "VectorAlphabet",
    "make_constellation",
    "vector_symbol",
    "symbol_block",
    "count_additions",
]


class ConstellationKind(str, enum.Enum):
    PSK = "psk"
    QAM = "qam"
    PAM = "pam"


#: orders accepted for PSK/PAM; QAM additionally requires a perfect square
_SUPPORTED_ORDERS = (2, 4, 8, 16, 64)

#: short names accepted on the command line / in config files
MODULATION_ALIASES = {
    "bpsk": (ConstellationKind.PSK, 2),
    "qpsk": (ConstellationKind.PSK, 4),
    "8psk": (ConstellationKind.PSK, 8),
    "16psk": (ConstellationKind.PSK, 16),
    "4qam": (ConstellationKind.QAM, 4),
    "16qam": (ConstellationKind.QAM, 16),
    "64qam": (ConstellationKind.QAM, 64),
    "2pam": (ConstellationKind.PAM, 2),
    "4pam": (ConstellationKind.PAM, 4),
    "8pam": (ConstellationKind.PAM, 8),
}


@dataclass(frozen=True)
class Constellation:
    """Ordered set of ``order`` distinct complex points, unit average energy."""

    kind: ConstellationKind
    order: int
    points: np.ndarray  # complex128, shape (order,)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.complex128)
        object.__setattr__(self, "points", pts)
        if pts.shape != (self.order,):
            raise ValueError("point count does not match order")
        if len({complex(p) for p in pts}) != self.order:
            raise ValueError("constellation points must be distinct")
        energy = float(np.mean(np.abs(pts) ** 2))
        if abs(energy - 1.0) > 1e-12:
            raise ValueError(f"average energy {energy} != 1")
        if abs(np.mean(pts)) > 1e-12:
            raise ValueError("constellation is not zero mean")


@dataclass(frozen=True)
class VectorAlphabet:
    """Product alphabet of ``base`` over ``n_t`` antennas, size m = Q**n_t."""

    base: Constellation
    n_t: int

    def __post_init__(self) -> None:
        if self.n_t < 1:
            raise ValueError("n_t must be positive")

    @property
    def m(self) -> int:
        return self.base.order ** self.n_t


def make_constellation(kind: ConstellationKind | str, order: int) -> Constellation:
    """Construct a normalized standard constellation.

    Point ordering is deterministic: PSK points are listed by increasing
    phase (QPSK uses the odd-multiples-of-45-degrees convention, so its
    first point is ``exp(j*pi/4)``); QAM points run over the square grid
    with the real level as the outer (slow) index and the imaginary level
    as the inner one, both ascending; PAM levels ascend.
    """
    kind = ConstellationKind(kind)
    if order not in _SUPPORTED_ORDERS:
        raise ValueError(f"unsupported order {order} for {kind.value}")
    if kind is ConstellationKind.PSK:
        # 45-degree offset only for QPSK; other PSK orders start at angle 0
        offset = np.pi / 4 if order == 4 else 0.0
        phases = offset + 2.0 * np.pi * np.arange(order) / order
        points = np.exp(1j * phases)
    elif kind is ConstellationKind.QAM:
        side = math.isqrt(order)
        if side * side != order:
            raise ValueError(f"QAM order {order} is not a perfect square")
        levels = np.arange(-(side - 1), side, 2, dtype=float)
        re, im = np.meshgrid(levels, levels, indexing="ij")
        points = (re + 1j * im).ravel()
        points = points / np.sqrt(2.0 * (order - 1) / 3.0)
    else:  # PAM
        levels = np.arange(-(order - 1), order, 2, dtype=float)
        points = levels.astype(np.complex128) / np.sqrt((order**2 - 1) / 3.0)
    return Constellation(kind=kind, order=order, points=points)


def make_alphabet(modulation: str, n_t: int) -> VectorAlphabet:
    """Build the vector alphabet for a short modulation name like 'qpsk'."""
    try:
        kind, order = MODULATION_ALIASES[modulation.lower()]
    except KeyError:
        raise ValueError(f"unknown modulation {modulation!r}") from None
    return VectorAlphabet(base=make_constellation(kind, order), n_t=n_t)


def vector_symbol(alphabet: VectorAlphabet, index: int) -> np.ndarray:
    """Return the transmit vector for ``index`` in [0, m).

    The index is expanded in base Q; the most significant digit selects the
    constellation point of antenna 1 (vector entry 0).
    """
    m = alphabet.m
    if not 0 <= index < m:
        raise ValueError(f"index {index} out of range [0, {m})")
    q = alphabet.base.order
    digits = np.empty(alphabet.n_t, dtype=np.int64)
    for pos in range(alphabet.n_t - 1, -1, -1):
        digits[pos] = index % q
        index //= q
    return alphabet.base.points[digits]


def symbol_block(alphabet: VectorAlphabet, start: int, stop: int) -> np.ndarray:
    """Vectors for indices [start, stop) as an (n_t, stop-start) array.

    Blockwise enumeration keeps large alphabets (e.g. 16QAM with n_t = 4)
    out of memory as a whole.
    """
    m = alphabet.m
    if not (0 <= start <= stop <= m):
        raise ValueError(f"block [{start}, {stop}) out of range [0, {m}]")
    q = alphabet.base.order
    idx = np.arange(start, stop, dtype=np.int64)
    block = np.empty((alphabet.n_t, stop - start), dtype=np.complex128)
    for pos in range(alphabet.n_t - 1, -1, -1):
        block[pos] = alphabet.base.points[idx % q]
        idx //= q
    return block


def count_additions(mode: str, orders: list[int], n_t: int) -> int:
    """Addition counts of the per-user versus joint mutual-information sums.

    ``per_user`` grows as sum_k Q_k**(2 n_t); ``joint`` as
    (prod_k Q_k)**(2 n_t).  Exact integer arithmetic (the joint count
    overflows 64-bit already for 16QAM, four users, four antennas).
    """
    if n_t < 1:
        raise ValueError("n_t must be positive")
    if not orders or any(q < 2 for q in orders):
        raise ValueError("orders must all be >= 2")
    if mode == "per_user":
        return sum(int(q) ** (2 * n_t) for q in orders)
    if mode == "joint":
        prod = 1
        for q in orders:
            prod *= int(q)
        return prod ** (2 * n_t)
    raise ValueError(f"unknown mode {mode!r}")
