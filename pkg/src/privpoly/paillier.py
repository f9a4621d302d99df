"""Paillier cryptosystem with the ``g = n + 1`` generator.

Keys are immutable; ciphertexts carry the id of the key they were formed
under so that cross-key arithmetic fails loudly instead of producing
garbage.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

from . import kernels
from .errors import MessageTooLarge, ParameterError, WrongKey
from .modmath import PrimeParams, RandomSource, gen_prime, mod_inv

MIN_KEY_BITS = 16


def _key_id(n: int) -> str:
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return hashlib.sha256(raw).hexdigest()[:16]


@dataclass(frozen=True)
class PublicKey:
    n: int
    nsquare: int = field(repr=False)
    key_id: str = field(repr=False)

    @classmethod
    def from_modulus(cls, n: int) -> "PublicKey":
        return cls(n, n * n, _key_id(n))

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def ciphertext_bytes(self) -> int:
        return (self.nsquare.bit_length() + 7) // 8


@dataclass(frozen=True)
class SecretKey:
    phi: int = field(repr=False)
    phi_inv: int = field(repr=False)
    key_id: str


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str


def keypair_from_primes(p: int, q: int) -> tuple[PublicKey, SecretKey]:
    """Build a key pair from given primes. Test hook; not for secure use."""
    if p == q:
        raise ParameterError("p and q must be distinct")
    n = p * q
    phi = (p - 1) * (q - 1)
    if math.gcd(phi, n) != 1:
        raise ParameterError("gcd(phi, n) != 1")
    pk = PublicKey.from_modulus(n)
    return pk, SecretKey(phi, mod_inv(phi, n), pk.key_id)


def keygen(bit_length: int, rng: RandomSource) -> tuple[PublicKey, SecretKey]:
    """Generate a key pair whose modulus has exactly ``bit_length`` bits."""
    if bit_length < MIN_KEY_BITS:
        raise ParameterError(f"key length must be >= {MIN_KEY_BITS} bits")
    half = PrimeParams(bit_length // 2)
    other = PrimeParams(bit_length - bit_length // 2)
    while True:
        p = gen_prime(half, rng)
        q = gen_prime(other, rng)
        if p == q or (p * q).bit_length() != bit_length:
            continue
        if math.gcd((p - 1) * (q - 1), p * q) != 1:
            continue
        return keypair_from_primes(p, q)


def _check(pk: PublicKey, *cts: Ciphertext) -> None:
    for ct in cts:
        if ct.key_id != pk.key_id:
            raise WrongKey(f"ciphertext under {ct.key_id}, key is {pk.key_id}")


def random_unit(pk: PublicKey, rng: RandomSource) -> int:
    """Uniform element of Z*_n by rejection sampling."""
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            return r


def encrypt(pk: PublicKey, m: int, rng: RandomSource | None = None, *, r: int | None = None) -> Ciphertext:
    """Encrypt ``m`` in ``[0, n)``. Pass ``r`` only to reproduce test vectors."""
    if not 0 <= m < pk.n:
        raise MessageTooLarge(f"plaintext must lie in [0, {pk.n})")
    if r is None:
        if rng is None:
            raise ParameterError("encrypt needs a random source or an explicit r")
        r = random_unit(pk, rng)
    # (1 + n)^m = 1 + m*n (mod n^2)
    nude = (1 + m * pk.n) % pk.nsquare
    return Ciphertext(nude * kernels.powmod(r, pk.n, pk.nsquare) % pk.nsquare, pk.key_id)


def decrypt(sk: SecretKey, pk: PublicKey, ct: Ciphertext) -> int:
    if sk.key_id != pk.key_id:
        raise WrongKey("secret key does not match public key")
    _check(pk, ct)
    u = kernels.powmod(ct.value, sk.phi, pk.nsquare)
    return (u - 1) // pk.n * sk.phi_inv % pk.n


def homomorphic_add(pk: PublicKey, ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    _check(pk, ct1, ct2)
    return Ciphertext(ct1.value * ct2.value % pk.nsquare, pk.key_id)


def scalar_mul(pk: PublicKey, ct: Ciphertext, s: int) -> Ciphertext:
    _check(pk, ct)
    if not 0 <= s < pk.n:
        raise MessageTooLarge(f"scalar must lie in [0, {pk.n})")
    return Ciphertext(kernels.powmod(ct.value, s, pk.nsquare), pk.key_id)


def linear_combination(pk: PublicKey, cts, scalars) -> Ciphertext:
    """``prod(ct_k ** s_k) mod n^2``: encrypts ``sum(s_k * m_k) mod n``."""
    cts = list(cts)
    scalars = list(scalars)
    _check(pk, *cts)
    for s in scalars:
        if not 0 <= s < pk.n:
            raise MessageTooLarge(f"scalar must lie in [0, {pk.n})")
    value = kernels.prod_powmod([c.value for c in cts], scalars, pk.nsquare)
    return Ciphertext(value, pk.key_id)


# Wire format: every integer is a 4-byte big-endian length then big-endian bytes.

def pack_int(value: int) -> bytes:
    raw = value.to_bytes((value.bit_length() + 7) // 8 or 1, "big")
    return struct.pack(">I", len(raw)) + raw


def unpack_int(buf: bytes, offset: int = 0) -> tuple[int, int]:
    (length,) = struct.unpack_from(">I", buf, offset)
    start = offset + 4
    return int.from_bytes(buf[start:start + length], "big"), start + length


def serialize_public_key(pk: PublicKey) -> bytes:
    return pack_int(pk.n)


def deserialize_public_key(buf: bytes) -> PublicKey:
    n, _ = unpack_int(buf)
    return PublicKey.from_modulus(n)


def serialize_ciphertext(ct: Ciphertext, pk: PublicKey) -> bytes:
    """Fixed width: the value is left-padded to the byte size of n^2."""
    _check(pk, ct)
    width = pk.ciphertext_bytes
    return struct.pack(">I", width) + ct.value.to_bytes(width, "big")


def deserialize_ciphertext(buf: bytes, pk: PublicKey) -> Ciphertext:
    value, _ = unpack_int(buf)
    if not 1 <= value < pk.nsquare:
        raise ParameterError("ciphertext out of range")
    return Ciphertext(value, pk.key_id)
