import random

import pytest

from privpoly.errors import NotInvertible, ParameterError
from privpoly.modmath import PrimeParams, gen_prime, is_probable_prime, mod_inv, mod_pow


def naive_pow(b, e, m):
    out = 1
    for _ in range(e):
        out = out * b % m
    return out


def egcd_inverse(a, m):
    old_r, r, old_s, s = a, m, 1, 0
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
    assert old_r == 1
    return old_s % m


def trial_division(n):
    return n >= 2 and all(n % d for d in range(2, int(n**0.5) + 1))


def test_mod_pow_examples():
    assert mod_pow(2, 10, 1000) == 24
    assert mod_pow(36, 3, 1225) == 106
    for n in (2, 7, 10**30 + 1):
        assert mod_pow(12345, 0, n) == 1


def test_mod_pow_against_naive_loop():
    rng = random.Random(0)
    for _ in range(100):
        m = rng.randrange(2, 10**6)
        b, e = rng.randrange(10**9), rng.randrange(1 << 10)
        assert mod_pow(b, e, m) == naive_pow(b, e, m)


def test_mod_pow_rejects_bad_modulus():
    with pytest.raises(ParameterError):
        mod_pow(3, 4, 1)


def test_mod_inv_examples():
    assert mod_inv(3, 7) == 5
    assert mod_inv(1, 99) == 1


def test_mod_inv_matches_extended_euclid(field):
    rng = random.Random(1)
    omega = field.omega
    for _ in range(50):
        a = rng.randrange(1, omega)
        assert mod_inv(a, omega) == egcd_inverse(a, omega) == pow(a, omega - 2, omega)


def test_mod_inv_not_invertible():
    with pytest.raises(NotInvertible):
        mod_inv(6, 9)


def test_is_probable_prime_matches_trial_division():
    for n in range(0, 5000):
        assert is_probable_prime(n) == trial_division(n), n


def test_gen_prime_small_bits():
    p = gen_prime(PrimeParams(8), random.Random(3))
    assert 128 <= p <= 255
    assert all(p % d for d in (2, 3, 5, 7, 11, 13))
    assert trial_division(p)


def test_gen_prime_deterministic_and_varied():
    assert gen_prime(PrimeParams(8), random.Random(5)) == gen_prime(PrimeParams(8), random.Random(5))
    draws = {gen_prime(PrimeParams(64), random.Random(s)) for s in range(100)}
    assert len(draws) == 100


def test_gen_prime_exact_bits_and_odd():
    for bits in (16, 33, 128):
        p = gen_prime(PrimeParams(bits), random.Random(bits))
        assert p.bit_length() == bits and p % 2 == 1


def test_prime_params_validation():
    with pytest.raises(ParameterError):
        PrimeParams(1)
