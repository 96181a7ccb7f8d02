"""Seeded deterministic hash families and the level-assignment function.

Everything here is integer-only so the same seeds give the same outputs on
any platform.  This module is the sole source of randomness for the rest of
the library: the whole on-disk image is a pure function of (element set,
master seed, parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

# Reserved key for the front sentinel; it appears at every level.
FRONT_KEY = 0

MAX_KEY = (1 << 64) - 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """Finalizer-style 64-bit mixing (splitmix64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _chunk32(stream_base: int, index: int) -> int:
    """index-th 32-bit chunk of the keyed stream rooted at stream_base."""
    return mix64((stream_base + (index + 1) * _GOLDEN) & _MASK64) & 0xFFFFFFFF


@dataclass(frozen=True)
class HashSeeds:
    """Sub-seeds for level assignment, h1, and h2. Fixed at creation."""

    seed_level: int
    seed_h1: int
    seed_h2: int

    @classmethod
    def from_master(cls, master_seed: int) -> "HashSeeds":
        m = master_seed & _MASK64
        return cls(
            seed_level=mix64(m + 1 * _GOLDEN),
            seed_h1=mix64(m + 2 * _GOLDEN),
            seed_h2=mix64(m + 3 * _GOLDEN),
        )


def _ceil_log(base: int, n: int) -> int:
    """Smallest k with base**k >= n, by integer arithmetic."""
    if base < 2:
        raise ValueError("log base must be >= 2")
    k = 0
    v = 1
    while v < n:
        v *= base
        k += 1
    return k


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for q in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % q == 0:
            return n == q
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    if n <= 2:
        return 2
    n += n % 2 == 0
    while not is_prime(n):
        n += 2
    return n


def min_table_slots(capacity: int, gamma: int, beta: int, alpha_max: float) -> int:
    """Slots needed for capacity nodes, per-string end markers, and the
    beta front partitions, at load alpha_max.  Deliberately generous (2x
    the expected node count) so the load stays under alpha_max w.h.p."""
    need = Fraction(2 * capacity * gamma, gamma - 1) + 2 * beta
    return math.ceil(need / Fraction(alpha_max))


@dataclass(frozen=True)
class Params:
    """Structure parameters.  table_slots is the size p of the slot array
    (prime), block_size is the block transfer size B in slots."""

    capacity: int
    gamma: int
    block_size: int
    table_slots: int
    alpha_max: float = 0.9

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.gamma < 2:
            raise ValueError("gamma must be >= 2")
        if self.block_size < 2:
            raise ValueError("block_size must be >= 2")
        if not 0 < self.alpha_max <= 0.9:
            raise ValueError("alpha_max must be in (0, 0.9]")
        if not is_prime(self.table_slots):
            raise ValueError("table_slots must be prime")
        floor = min_table_slots(self.capacity, self.gamma, self.beta, self.alpha_max)
        if self.table_slots < floor:
            raise ValueError(
                f"table_slots={self.table_slots} below minimum {floor}"
            )

    @cached_property
    def beta(self) -> int:
        """Level cap: ceil(log_gamma(capacity)) + 2."""
        return _ceil_log(self.gamma, self.capacity) + 2

    @property
    def q(self) -> Fraction:
        return Fraction(1, self.gamma)

    @cached_property
    def level_threshold(self) -> int:
        # A 32-bit chunk below this is a "tail"; bias vs. exact 1/gamma is
        # <= gamma/2**32 per trial.
        return (1 << 32) // self.gamma

    @property
    def block_count(self) -> int:
        return -(-self.table_slots // self.block_size)

    @classmethod
    def create(
        cls,
        capacity: int,
        gamma: int,
        block_size: int,
        alpha_max: float = 0.9,
        table_slots: int | None = None,
    ) -> "Params":
        beta = _ceil_log(gamma, capacity) + 2
        if table_slots is None:
            table_slots = next_prime(
                min_table_slots(capacity, gamma, beta, alpha_max)
            )
        return cls(capacity, gamma, block_size, table_slots, alpha_max)


def level_of(x: int, seeds: HashSeeds, params: Params) -> int:
    """Level of element x, in [1, beta].

    The front sentinel is pinned at beta.  Otherwise the level is 1 plus
    the count of consecutive leading 32-bit chunks below the 1/gamma
    threshold, capped at beta, which realizes the truncated geometric
    distribution q^(k-1)(1-q).
    """
    if x == FRONT_KEY:
        return params.beta
    beta = params.beta
    threshold = params.level_threshold
    base = mix64(seeds.seed_level ^ mix64(x))
    level = 1
    i = 0
    while level < beta and _chunk32(base, i) < threshold:
        level += 1
        i += 1
    return level


def h1(label: tuple[int, int], seeds: HashSeeds, params: Params) -> int:
    """1-universal-style hash of the canonical 9-byte label encoding
    (8-byte element big-endian, then the level byte) into [p]."""
    element, level = label
    h = mix64(mix64(seeds.seed_h1 ^ element) + level)
    return h % params.table_slots


def poly_coeffs(seed_h2: int, table_slots: int) -> tuple[int, int, int, int, int]:
    """Seed-derived coefficients a0..a4 of the degree-4 polynomial over
    the prime field of size table_slots (5-universal family)."""
    return tuple(
        mix64(seed_h2 + (i + 1) * _GOLDEN) % table_slots for i in range(5)
    )


def h2(slot: int, coeffs: tuple[int, ...], table_slots: int) -> int:
    """Degree-4 polynomial over GF(table_slots), evaluated by Horner."""
    if not 0 <= slot < table_slots:
        raise ValueError(f"slot {slot} out of range [0, {table_slots})")
    a0, a1, a2, a3, a4 = coeffs
    p = table_slots
    return (((((a4 * slot + a3) % p) * slot + a2) % p * slot + a1) % p * slot + a0) % p


def label_hash(label: tuple[int, int], seeds: HashSeeds, params: Params) -> int:
    """h2 composed with h1: the allocator's hash for partition labels."""
    coeffs = poly_coeffs(seeds.seed_h2, params.table_slots)
    return h2(h1(label, seeds, params), coeffs, params.table_slots)
