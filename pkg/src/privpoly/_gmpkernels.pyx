# cython: language_level=3, boundscheck=False, wraparound=False
"""GMP-backed modular exponentiation kernels.

Python ints cross the boundary as little-endian byte strings; the
conversion is negligible next to a single 1024-bit exponentiation.
"""

from libc.stdlib cimport malloc, free

cdef extern from "gmp.h":
    ctypedef struct __mpz_struct:
        pass
    ctypedef __mpz_struct mpz_t[1]
    ctypedef __mpz_struct *mpz_ptr
    ctypedef const __mpz_struct *mpz_srcptr

    void mpz_init(mpz_ptr)
    void mpz_clear(mpz_ptr)
    void mpz_set_ui(mpz_ptr, unsigned long)
    void mpz_powm(mpz_ptr, mpz_srcptr, mpz_srcptr, mpz_srcptr)
    void mpz_mul(mpz_ptr, mpz_srcptr, mpz_srcptr)
    void mpz_mod(mpz_ptr, mpz_srcptr, mpz_srcptr)
    size_t mpz_sizeinbase(mpz_srcptr, int)
    void mpz_import(mpz_ptr, size_t, int, size_t, int, size_t, const void *)
    void *mpz_export(void *, size_t *, int, size_t, int, size_t, mpz_srcptr)


cdef void _load(mpz_ptr dst, object value) except *:
    cdef bytes raw
    if value < 0:
        raise ValueError("kernels accept nonnegative integers only")
    if value == 0:
        mpz_set_ui(dst, 0)
        return
    raw = value.to_bytes((value.bit_length() + 7) // 8, "little")
    mpz_import(dst, len(raw), -1, 1, 0, 0, <const char *>raw)


cdef object _dump(mpz_srcptr src):
    cdef size_t nbytes = (mpz_sizeinbase(src, 2) + 7) // 8
    cdef size_t count = 0
    cdef unsigned char *buf = <unsigned char *>malloc(nbytes + 1)
    if buf == NULL:
        raise MemoryError()
    try:
        mpz_export(buf, &count, -1, 1, 0, 0, src)
        return int.from_bytes(buf[:count], "little")
    finally:
        free(buf)


def powmod(base, exp, modulus):
    """Return ``base**exp % modulus`` for nonnegative ints."""
    cdef mpz_t b, e, m, r
    mpz_init(b); mpz_init(e); mpz_init(m); mpz_init(r)
    try:
        _load(b, base)
        _load(e, exp)
        _load(m, modulus)
        mpz_powm(r, b, e, m)
        return _dump(r)
    finally:
        mpz_clear(b); mpz_clear(e); mpz_clear(m); mpz_clear(r)


def prod_powmod(bases, exps, modulus):
    """Return ``prod(b**e for b, e in zip(bases, exps)) % modulus``."""
    cdef mpz_t acc, b, e, m, t
    mpz_init(acc); mpz_init(b); mpz_init(e); mpz_init(m); mpz_init(t)
    try:
        _load(m, modulus)
        mpz_set_ui(acc, 1)
        mpz_mod(acc, acc, m)
        for base, exp in zip(bases, exps):
            _load(b, base)
            _load(e, exp)
            mpz_powm(t, b, e, m)
            mpz_mul(acc, acc, t)
            mpz_mod(acc, acc, m)
        return _dump(acc)
    finally:
        mpz_clear(acc); mpz_clear(b); mpz_clear(e); mpz_clear(m); mpz_clear(t)
