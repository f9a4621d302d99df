"""Pure-Python reference kernels, used when the compiled module is absent."""


def powmod(base, exp, modulus):
    if base < 0 or exp < 0 or modulus < 0:
        raise ValueError("kernels accept nonnegative integers only")
    return pow(base, exp, modulus)


def prod_powmod(bases, exps, modulus):
    acc = 1 % modulus
    for base, exp in zip(bases, exps):
        acc = acc * powmod(base, exp, modulus) % modulus
    return acc
