import random
from fractions import Fraction

import pytest
import sympy

from privpoly.errors import InvalidSupport, MissingAgent
from privpoly.poly import (Monomial, UnivariatePoly, collect, decompose, drop_agent, evaluate_monomials,
                           evaluate_plain, expand, from_parts, transform)

M = Monomial.of
EXAMPLE1 = [M(2, {1: 2, 2: 1}), M(3, {1: 1, 3: 1}), M(4, {1: 1, 4: 3}), M(1, {1: 1, 2: 2, 3: 2, 4: 1}),
            M(3, {1: 1, 2: 2, 3: 1, 4: 1})]
ONES = {1: 1, 2: 1, 3: 1, 4: 1}


def example1():
    return decompose(EXAMPLE1, 1, [2, 3, 4])


def test_example1_decomposition():
    s = example1()
    assert s.part(2).terms == ((2, 2, 1),)
    assert s.part(3).terms == ((3, 1, 1),)
    assert s.part(4).terms == ((4, 1, 3),)
    assert s.T == 1
    (term,) = s.multiplicative
    assert term.factor(1).poly.terms == ((1, 1),)
    assert term.factor(2).poly.terms == ((1, 2),)
    assert sorted(term.factor(3).poly.terms, key=lambda t: t[1]) == [(3, 1), (1, 2)]
    assert term.factor(4).poly.terms == ((1, 1),)


def test_example1_value():
    assert evaluate_plain(example1(), ONES) == 13


def test_affine_input_has_no_products():
    s = decompose([M(1, {2: 1}), M(-2, {1: 1}), M(5, {3: 1})], 1, [2, 3])
    assert s.T == 0 and s.multiplicative == ()
    assert evaluate_plain(s, {1: 1, 2: 2, 3: 3}) == 15


def test_zero_point():
    assert evaluate_plain(example1(), {1: 0, 2: 0, 3: 0, 4: 0}) == 0


def test_drop_agent_example1():
    dropped = drop_agent(example1(), 4)
    expected = [M(2, {1: 2, 2: 1}), M(3, {1: 1, 3: 1}), M(4, {1: 1}), M(1, {1: 1, 2: 2, 3: 2}),
                M(3, {1: 1, 2: 2, 3: 1})]
    assert expand(dropped) == collect(expected)
    assert dropped.neighbors == (2, 3)
    assert drop_agent(dropped, 4) == dropped


def test_drop_agent_monomial_rule():
    rng = random.Random(1)
    for _ in range(30):
        monos = random_monomials(rng, 1, [2, 3, 4, 5], 4)
        spec = decompose(monos, 1, [2, 3, 4, 5])
        j = rng.choice([2, 3, 4, 5])
        vals = {a: Fraction(rng.randint(-8, 8), 4) for a in range(1, 6)}
        dropped = drop_agent(spec, j)
        assert evaluate_plain(dropped, vals) == evaluate_plain(spec, {**vals, j: 1})
        assert drop_agent(dropped, j) == dropped


def random_monomials(rng, owner, nbrs, d, n=8):
    out = []
    for _ in range(n):
        exps = {}
        for _ in range(rng.randint(1, d)):
            a = rng.choice([owner, *nbrs])
            exps[a] = exps.get(a, 0) + 1
        out.append(M(rng.randint(-5, 5) or 1, exps))
    return out


def test_expand_round_trip_against_sympy():
    rng = random.Random(2)
    nbrs = [2, 3, 4, 5, 6]
    xs = {a: sympy.Symbol(f"x{a}") for a in [1, *nbrs]}
    for _ in range(40):
        monos = random_monomials(rng, 1, nbrs, 4, n=10)
        spec = decompose(monos, 1, nbrs)
        assert expand(spec) == collect(monos)
        lhs = sympy.expand(sum(sympy.Rational(c.numerator, c.denominator) * sympy.Mul(
            *(xs[a] ** e for a, e in p)) for p, c in expand(spec).items()))
        rhs = sympy.expand(sum(sympy.Rational(m.coeff.numerator, m.coeff.denominator) * sympy.Mul(
            *(xs[a] ** e for a, e in m.powers)) for m in monos))
        assert sympy.simplify(lhs - rhs) == 0
        for term in spec.multiplicative:
            assert len(term.active_neighbors(1)) >= 2 or term.degenerate(1)


def test_two_path_evaluation():
    rng = random.Random(3)
    for _ in range(100):
        monos = random_monomials(rng, 1, [2, 3, 4], 4)
        spec = decompose(monos, 1, [2, 3, 4])
        vals = {a: rng.uniform(-2, 2) for a in range(1, 5)}
        a, b = evaluate_plain(spec, vals), evaluate_monomials(monos, vals)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_support_errors():
    with pytest.raises(InvalidSupport):
        decompose([M(1, {1: 1, 9: 1})], 1, [2, 3])
    with pytest.raises(MissingAgent):
        evaluate_plain(example1(), {1: 1, 2: 1, 3: 1})


def test_from_parts_and_transforms():
    spec = from_parts(1, [2, 3], {2: [(2, 1, 1)], 3: [(1, 0, 1)]},
                      [{2: UnivariatePoly.monomial(1), 3: UnivariatePoly.monomial(1)}],
                      features={3: {1: "sin"}})
    v = evaluate_plain(spec, {1: 0.5, 2: 2.0, 3: 0.3})
    import math
    assert v == pytest.approx(2 * 0.5 * 2.0 + math.sin(0.3) + 2.0 * math.sin(0.3))
    assert transform("power:3")(2.0) == 8.0
    with pytest.raises(ValueError):
        transform("reciprocal")(0.0)
    with pytest.raises(ValueError):
        transform("tan")
