"""Fixed-point encoding of reals into the prime field Z_omega.

A value ``v`` at scale exponent ``e`` is stored as ``round(v * L**e) mod
omega`` with ``L = 2**frac_bits``.  Decoding takes the symmetric lift in
``(-omega/2, omega/2)``.  Products add scale exponents; sums demand equal
ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real

from .errors import EncodingOverflow, ParameterError, ScaleError
from .modmath import PrimeParams, RandomSource, gen_prime, is_probable_prime

DEFAULT_FRAC_BITS = 16
DEFAULT_OMEGA_BITS = 200


@dataclass(frozen=True)
class FieldParams:
    omega: int
    frac_bits: int = DEFAULT_FRAC_BITS

    def __post_init__(self):
        if self.frac_bits < 0:
            raise ParameterError("frac_bits must be nonnegative")
        if self.omega < 3 or not is_probable_prime(self.omega):
            raise ParameterError("omega must be an odd prime")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def half(self) -> int:
        return self.omega // 2

    def max_scale_exp(self, magnitude: float) -> int:
        """Largest exponent at which ``magnitude`` still encodes."""
        e = 0
        while abs(magnitude) * self.scale ** (e + 1) < self.omega / 2:
            e += 1
        return e

    @classmethod
    def generate(cls, bits: int, rng: RandomSource, frac_bits: int = DEFAULT_FRAC_BITS) -> "FieldParams":
        return cls(gen_prime(PrimeParams(bits), rng), frac_bits)


@dataclass(frozen=True)
class EncodedValue:
    residue: int
    scale_exp: int

    def lift(self, params: FieldParams) -> int:
        return lift(self.residue, params)


def lift(residue: int, params: FieldParams) -> int:
    """Symmetric representative of ``residue`` in ``(-omega/2, omega/2)``."""
    r = residue % params.omega
    return r - params.omega if r > params.half else r


def _scaled_integer(v, params: FieldParams, scale_exp: int) -> int:
    if scale_exp < 0:
        raise ScaleError("scale exponent must be nonnegative")
    if isinstance(v, float) and v != v:
        raise EncodingOverflow("cannot encode NaN")
    if isinstance(v, (int, Fraction)):
        exact = Fraction(v)
    elif isinstance(v, Real):
        if v in (float("inf"), float("-inf")):
            raise EncodingOverflow("cannot encode infinity")
        exact = Fraction(float(v))
    else:
        raise TypeError(f"cannot encode {type(v).__name__}")
    return round(exact * params.scale**scale_exp)


def check_range(z: int, params: FieldParams) -> int:
    if 2 * abs(z) >= params.omega:
        raise EncodingOverflow(
            f"|value| needs {abs(z).bit_length() + 1} bits, field has {params.omega.bit_length()}"
        )
    return z


def encode(v, params: FieldParams, scale_exp: int = 1) -> EncodedValue:
    z = check_range(_scaled_integer(v, params, scale_exp), params)
    return EncodedValue(z % params.omega, scale_exp)


def decode_exact(ev: EncodedValue, params: FieldParams) -> Fraction:
    return Fraction(lift(ev.residue, params), params.scale**ev.scale_exp)


def decode(ev: EncodedValue, params: FieldParams) -> float:
    return float(decode_exact(ev, params))


def normalize_to_scale(ev: EncodedValue, params: FieldParams, target_exp: int) -> EncodedValue:
    if target_exp < ev.scale_exp:
        raise ScaleError(f"cannot lower scale {ev.scale_exp} to {target_exp}")
    factor = params.scale ** (target_exp - ev.scale_exp)
    z = check_range(lift(ev.residue, params) * factor, params)
    return EncodedValue(z % params.omega, target_exp)


def field_mul(a: EncodedValue, b: EncodedValue, params: FieldParams) -> EncodedValue:
    return EncodedValue(a.residue * b.residue % params.omega, a.scale_exp + b.scale_exp)


def field_add(a: EncodedValue, b: EncodedValue, params: FieldParams) -> EncodedValue:
    if a.scale_exp != b.scale_exp:
        raise ScaleError(f"adding scale {a.scale_exp} to scale {b.scale_exp}")
    return EncodedValue((a.residue + b.residue) % params.omega, a.scale_exp)


def field_pow(a: EncodedValue, k: int, params: FieldParams) -> EncodedValue:
    return EncodedValue(pow(a.residue, k, params.omega), a.scale_exp * k)


def quantization_bound(params: FieldParams, scale_exp: int) -> float:
    """Worst-case absolute rounding error of a single encode."""
    return 0.5 / params.scale**scale_exp
