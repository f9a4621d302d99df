"""Random query generators shared by the protocol and acceptance tests."""

import random
from fractions import Fraction

from privpoly.poly import Monomial, UnivariatePoly, from_parts


def dyadic(rng: random.Random) -> Fraction:
    # integers and short binary fractions are exact at every scale
    if rng.random() < 0.5:
        return Fraction(rng.choice([-1, 1]) * rng.randint(1, 5))
    return Fraction(rng.choice([-1, 1]) * rng.randint(1, 15), 2 ** rng.randint(1, 3))


def random_factor(rng, max_deg: int) -> UnivariatePoly:
    qs = sorted(rng.sample(range(max_deg + 1), rng.randint(1, min(2, max_deg + 1))))
    if qs == [0]:
        qs = [1]
    return UnivariatePoly(tuple((dyadic(rng), q) for q in qs))


def random_spec(rng: random.Random, n_neighbors: int, d: int = 4, T: int | None = None, owner: int = 1):
    nbrs = list(range(owner + 1, owner + 1 + n_neighbors))
    parts = {}
    for j in nbrs:
        terms = []
        for _ in range(rng.randint(0, 2)):
            pi = rng.randint(0, d - 1)
            terms.append((dyadic(rng), pi, rng.randint(0 if pi else 1, d - pi)))
        parts[j] = terms
    if T is None:
        T = rng.randint(0, 3)
    products = []
    for _ in range(T):
        members = rng.sample(nbrs, 2)
        deg_left = d
        fmap = {}
        for a in members:
            q = rng.randint(1, min(2, deg_left - (len(members) - len(fmap) - 1)))
            fmap[a] = random_factor(rng, q)
            deg_left -= fmap[a].degree
        if deg_left > 0 and rng.random() < 0.5:
            fmap[owner] = random_factor(rng, min(1, deg_left))
        products.append(fmap)
    return from_parts(owner, nbrs, parts, products)


def random_values(rng: random.Random, members) -> dict:
    return {a: rng.choice([-1, 1]) * rng.uniform(1, 2) for a in members}


def magnitude(spec, values) -> float:
    """Sum of absolute monomial values, the scale relative errors are measured against."""
    from privpoly.poly import expand
    total = Fraction(0)
    exact = {a: Fraction(v) for a, v in values.items()}
    for powers, c in expand(spec).items():
        total += abs(Monomial(c, powers).evaluate(exact))
    return float(total)
