"""Modular arithmetic, Miller-Rabin primality and prime generation.

Every random draw goes through an explicitly passed source with the
``random.Random`` interface (``getrandbits``, ``randrange``), so a seeded
``random.Random`` replays bit-exactly and ``random.SystemRandom`` gives
OS entropy for real deployments.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import kernels
from .errors import NotInvertible, ParameterError

SMALL_PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149,
    151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
    233, 239, 241, 251,
)

# Witness set that makes Miller-Rabin deterministic for n < 3.3e24 > 2^64.
_DETERMINISTIC_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)

RandomSource = random.Random


@dataclass(frozen=True)
class PrimeParams:
    bit_length: int
    miller_rabin_rounds: int = 40

    def __post_init__(self):
        if self.bit_length < 2:
            raise ParameterError("bit_length must be at least 2")
        if self.miller_rabin_rounds < 1:
            raise ParameterError("miller_rabin_rounds must be positive")


def mod_pow(base: int, exp: int, modulus: int) -> int:
    """Return ``base**exp mod modulus``."""
    if modulus < 2:
        raise ParameterError(f"modulus must be >= 2, got {modulus}")
    if exp < 0:
        raise ParameterError("negative exponents go through mod_inv")
    return kernels.powmod(base % modulus, exp, modulus)


def mod_inv(a: int, modulus: int) -> int:
    """Return ``b`` with ``a*b = 1 (mod modulus)``."""
    if modulus < 2:
        raise ParameterError(f"modulus must be >= 2, got {modulus}")
    try:
        return pow(a, -1, modulus)
    except ValueError:
        raise NotInvertible(f"{a} has no inverse modulo {modulus}") from None


def _miller_rabin_witness(n: int, d: int, s: int, a: int) -> bool:
    """True when ``a`` proves ``n`` composite."""
    x = kernels.powmod(a, d, n)
    if x == 1 or x == n - 1:
        return False
    for _ in range(s - 1):
        x = x * x % n
        if x == n - 1:
            return False
    return True


def is_probable_prime(n: int, rounds: int = 40, rng: RandomSource | None = None) -> bool:
    if n < 2:
        return False
    for p in SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    if n < (1 << 64):
        witnesses = _DETERMINISTIC_WITNESSES
    else:
        rng = rng or random.Random(n)
        witnesses = [rng.randrange(2, n - 1) for _ in range(rounds)]
    return not any(_miller_rabin_witness(n, d, s, a) for a in witnesses)


def gen_prime(params: PrimeParams, rng: RandomSource) -> int:
    """Draw a prime of exactly ``params.bit_length`` bits."""
    bits = params.bit_length
    if bits == 2:
        return rng.choice((2, 3))
    top = 1 << (bits - 1)
    while True:
        candidate = rng.getrandbits(bits) | top | 1
        if is_probable_prime(candidate, params.miller_rabin_rounds, rng):
            return candidate
