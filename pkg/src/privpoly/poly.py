"""Polynomial queries and their decomposition into protocol form.

A query of owner ``i`` is split into per-neighbor bivariate parts
``P_j(x_i, x_j)`` and ``T`` products ``prod_j W_j^t(x_j)`` of univariate
factors, one factor per member of the closed neighborhood.  Coefficients
are exact rationals; floats only appear at evaluation and encoding time.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from .errors import InvalidSupport, MissingAgent

Powers = tuple  # sorted ((agent, exponent), ...) with exponent > 0


def _powers(exponents: Mapping[int, int]) -> Powers:
    out = []
    for agent, e in exponents.items():
        e = int(e)
        if e < 0:
            raise ValueError(f"negative exponent {e} on agent {agent}")
        if e:
            out.append((int(agent), e))
    return tuple(sorted(out))


@dataclass(frozen=True)
class Monomial:
    coeff: Fraction
    powers: Powers = ()

    @classmethod
    def of(cls, coeff, exponents: Mapping[int, int] | None = None) -> "Monomial":
        return cls(Fraction(coeff), _powers(exponents or {}))

    @property
    def exponents(self) -> dict[int, int]:
        return dict(self.powers)

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    def evaluate(self, values: Mapping[int, object]):
        out = self.coeff
        for agent, e in self.powers:
            try:
                out = out * values[agent] ** e
            except KeyError:
                raise MissingAgent(agent) from None
        return out


def collect(monomials: Iterable[Monomial]) -> dict[Powers, Fraction]:
    """Merge like terms into a coefficient map, dropping zeros."""
    acc: dict[Powers, Fraction] = defaultdict(Fraction)
    for m in monomials:
        acc[m.powers] += m.coeff
    return {p: c for p, c in acc.items() if c != 0}


def monomials_of(coeffs: Mapping[Powers, Fraction]) -> list[Monomial]:
    return [Monomial(c, p) for p, c in sorted(coeffs.items())]


@dataclass(frozen=True)
class BivariatePart:
    neighbor: int
    terms: tuple = ()  # (coeff, p_i, p_j)


@dataclass(frozen=True)
class UnivariatePoly:
    terms: tuple  # ((coeff, q), ...)

    @classmethod
    def one(cls) -> "UnivariatePoly":
        return cls(((Fraction(1), 0),))

    @classmethod
    def monomial(cls, q: int, coeff=1) -> "UnivariatePoly":
        return cls(((Fraction(coeff), q),))

    @property
    def is_unit(self) -> bool:
        """A bare power ``x**q`` with coefficient one."""
        return len(self.terms) == 1 and self.terms[0][0] == 1

    @property
    def is_one(self) -> bool:
        return self.is_unit and self.terms[0][1] == 0

    @property
    def degree(self) -> int:
        return max(q for _, q in self.terms)

    def scaled(self, k) -> "UnivariatePoly":
        return UnivariatePoly(tuple((c * k, q) for c, q in self.terms))


@dataclass(frozen=True)
class Factor:
    poly: UnivariatePoly
    sensitive: bool = True  # coefficients private to the owner


@dataclass(frozen=True)
class MultiplicativeTerm:
    index: int
    factors: tuple  # ((agent, Factor), ...) covering the closed neighborhood

    def factor(self, agent: int) -> Factor:
        for a, f in self.factors:
            if a == agent:
                return f
        raise MissingAgent(agent)

    def active_neighbors(self, owner: int) -> list[int]:
        return [a for a, f in self.factors if a != owner and f.poly.degree > 0]

    def degenerate(self, owner: int) -> bool:
        return len(self.active_neighbors(owner)) < 2


# Whitelisted feature transforms for the generalized function class.
TRANSFORMS: dict[str, Callable[[float], float]] = {
    "identity": lambda x: x,
    "exp": math.exp,
    "sin": math.sin,
    "cos": math.cos,
    "abs": abs,
}
RECIPROCAL_GUARD = 1e-9


def transform(name: str) -> Callable[[float], float]:
    """Resolve a whitelisted transform name, e.g. ``sin`` or ``power:3``."""
    if name in TRANSFORMS:
        return TRANSFORMS[name]
    if name.startswith("power:"):
        k = int(name.split(":", 1)[1])
        if k < 0:
            raise ValueError("power transforms need a nonnegative exponent")
        return lambda x: float(x) ** k
    if name == "reciprocal":
        def recip(x):
            if abs(x) < RECIPROCAL_GUARD:
                raise ValueError(f"reciprocal of {x} below guard")
            return 1.0 / x
        return recip
    raise ValueError(f"transform {name!r} is not whitelisted")


@dataclass(frozen=True)
class PolynomialSpec:
    owner: int
    neighbors: tuple
    bivariate: tuple = ()
    multiplicative: tuple = ()
    # agent -> ((index, transform name), ...); None means plain powers.
    features: tuple | None = None

    @property
    def members(self) -> tuple:
        return (self.owner, *self.neighbors)

    @property
    def T(self) -> int:
        return len(self.multiplicative)

    def part(self, j: int) -> BivariatePart:
        for p in self.bivariate:
            if p.neighbor == j:
                return p
        raise MissingAgent(j)

    def feature_map(self, agent: int) -> dict[int, str] | None:
        if self.features is None:
            return None
        return dict(dict(self.features).get(agent, ()))

    def is_power_form(self) -> bool:
        return self.features is None

    @property
    def degree(self) -> int:
        d = 0
        for part in self.bivariate:
            for _, pi, pj in part.terms:
                d = max(d, pi + pj)
        for term in self.multiplicative:
            d = max(d, sum(f.poly.degree for _, f in term.factors))
        return d


def feature_value(spec: PolynomialSpec, agent: int, index: int, x):
    """Value of feature ``index`` of ``agent``; unmapped indices are plain powers."""
    fmap = spec.feature_map(agent)
    if not fmap or index not in fmap:
        return x**index
    return transform(fmap[index])(float(x))


def _support_check(coeffs, owner: int, neighbors) -> None:
    allowed = {owner, *neighbors}
    for powers in coeffs:
        for agent, _ in powers:
            if agent not in allowed:
                raise InvalidSupport(f"agent {agent} is not in the closed neighborhood of {owner}")


def _gcd_and_quotients(group):
    agents = sorted({a for powers, _ in group for a, _ in powers})
    gcd = {a: min(dict(p).get(a, 0) for p, _ in group) for a in agents}
    quotients = [({a: dict(p).get(a, 0) - gcd[a] for a in agents}, c) for p, c in group]
    varying = sorted({a for q, _ in quotients for a, e in q.items() if e})
    return gcd, quotients, varying


def _factorable(group) -> bool:
    return len(_gcd_and_quotients(group)[2]) <= 1


def _product_term(index: int, group, owner: int, members) -> MultiplicativeTerm:
    gcd, quotients, varying = _gcd_and_quotients(group)
    factors = {a: Factor(UnivariatePoly.monomial(gcd.get(a, 0)), sensitive=False) for a in members}
    if varying:
        (v,) = varying
        terms = tuple(sorted(((c, gcd.get(v, 0) + q.get(v, 0)) for q, c in quotients), key=lambda t: t[1]))
        factors[v] = Factor(UnivariatePoly(terms), sensitive=True)
    else:
        # single monomial: its coefficient rides on the owner's local factor
        ((_, c),) = quotients
        factors[owner] = Factor(UnivariatePoly.monomial(gcd.get(owner, 0), c), sensitive=True)
    return MultiplicativeTerm(index, tuple(sorted(factors.items())))


def decompose(monomials: Iterable[Monomial], owner: int, neighbors: Iterable[int]) -> PolynomialSpec:
    """Split a monomial list into bivariate parts and grouped products.

    Monomials touching at most one neighbor go to that neighbor's part;
    terms in the owner's variable alone ride on the smallest neighbor's
    part with ``p_j = 0``.  The rest are grouped by neighbor support, and
    each group is split greedily into subgroups whose quotient by their
    common monomial varies in at most one agent, so each subgroup is a
    single product of univariate factors.
    """
    neighbors = tuple(sorted(set(int(j) for j in neighbors) - {owner}))
    if not neighbors:
        raise InvalidSupport(f"agent {owner} has no neighbors")
    coeffs = collect(monomials)
    _support_check(coeffs, owner, neighbors)
    members = (owner, *neighbors)

    parts: dict[int, list] = {j: [] for j in neighbors}
    groups: dict[frozenset, list] = defaultdict(list)
    for powers, c in sorted(coeffs.items()):
        exps = dict(powers)
        nbrs = [a for a in exps if a != owner]
        if len(nbrs) <= 1:
            j = nbrs[0] if nbrs else neighbors[0]
            parts[j].append((c, exps.get(owner, 0), exps.get(j, 0)))
        else:
            groups[frozenset(nbrs)].append((powers, c))

    products = []
    for support in sorted(groups, key=lambda s: sorted(s)):
        subgroups: list[list] = []
        for item in groups[support]:
            for sub in subgroups:
                if _factorable(sub + [item]):
                    sub.append(item)
                    break
            else:
                subgroups.append([item])
        for sub in subgroups:
            products.append(_product_term(len(products) + 1, sub, owner, members))

    bivariate = tuple(BivariatePart(j, tuple(sorted(parts[j], key=lambda t: (t[1], t[2])))) for j in neighbors)
    return PolynomialSpec(owner, neighbors, bivariate, tuple(products))


def from_parts(owner, neighbors, bivariate: Mapping[int, Iterable], products: Iterable[Mapping[int, object]],
               features=None) -> PolynomialSpec:
    """Build a spec directly from parts and factor maps.

    ``products`` is a list of ``{agent: UnivariatePoly | Factor}``; members
    without an entry get the constant factor one.
    """
    neighbors = tuple(sorted(set(neighbors) - {owner}))
    members = (owner, *neighbors)
    parts = tuple(
        BivariatePart(j, tuple((Fraction(c), int(pi), int(pj)) for c, pi, pj in bivariate.get(j, ())))
        for j in neighbors
    )
    terms = []
    for t, fmap in enumerate(products, start=1):
        factors = {}
        for a in members:
            f = fmap.get(a)
            if f is None:
                factors[a] = Factor(UnivariatePoly.one(), sensitive=False)
            elif isinstance(f, Factor):
                factors[a] = f
            else:
                factors[a] = Factor(f, sensitive=not f.is_unit)
        extra = set(fmap) - set(members)
        if extra:
            raise InvalidSupport(f"factors for non-members {sorted(extra)}")
        terms.append(MultiplicativeTerm(t, tuple(sorted(factors.items()))))
    if features is not None:
        features = tuple(sorted((a, tuple(sorted(m.items()))) for a, m in features.items()))
    return PolynomialSpec(owner, neighbors, parts, tuple(terms), features)


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = defaultdict(Fraction)
    for pa, ca in a.items():
        for pb, cb in b.items():
            merged = defaultdict(int, dict(pa))
            for agent, e in pb:
                merged[agent] += e
            out[_powers(merged)] += ca * cb
    return {p: c for p, c in out.items() if c != 0}


def expand(spec: PolynomialSpec) -> dict[Powers, Fraction]:
    """Coefficient map of the spec as a formal polynomial (power form only)."""
    if not spec.is_power_form():
        raise ValueError("feature-transformed specs have no polynomial expansion")
    monos = []
    for part in spec.bivariate:
        for c, pi, pj in part.terms:
            monos.append(Monomial.of(c, {spec.owner: pi, part.neighbor: pj}))
    coeffs = collect(monos)
    for term in spec.multiplicative:
        prod = {(): Fraction(1)}
        for agent, f in term.factors:
            prod = _poly_mul(prod, {_powers({agent: q}): c for c, q in f.poly.terms})
        for p, c in prod.items():
            coeffs[p] = coeffs.get(p, Fraction(0)) + c
    return {p: c for p, c in coeffs.items() if c != 0}


def _require(values: Mapping[int, object], agents) -> None:
    for a in agents:
        if a not in values:
            raise MissingAgent(a)


def evaluate_bivariate(spec: PolynomialSpec, values: Mapping[int, object]):
    total = 0
    xi = values[spec.owner]
    for part in spec.bivariate:
        xj = values[part.neighbor]
        for c, pi, pj in part.terms:
            total += c * feature_value(spec, spec.owner, pi, xi) * feature_value(spec, part.neighbor, pj, xj)
    return total


def evaluate_factor(spec: PolynomialSpec, agent: int, factor: Factor, x):
    return sum(c * feature_value(spec, agent, q, x) for c, q in factor.poly.terms)


def evaluate_products(spec: PolynomialSpec, values: Mapping[int, object]):
    total = 0
    for term in spec.multiplicative:
        prod = 1
        for agent, f in term.factors:
            prod = prod * evaluate_factor(spec, agent, f, values[agent])
        total += prod
    return total


def evaluate_plain(spec: PolynomialSpec, values: Mapping[int, object]) -> float:
    """Reference evaluation without any cryptography.

    Exact for rational inputs (floats are exact binary fractions); the
    result is returned as a float.
    """
    _require(values, spec.members)
    if spec.is_power_form():
        exact = {a: Fraction(v) for a, v in values.items() if a in spec.members}
        return float(evaluate_bivariate(spec, exact) + evaluate_products(spec, exact))
    return float(evaluate_bivariate(spec, values) + evaluate_products(spec, values))


def evaluate_monomials(monomials: Iterable[Monomial], values: Mapping[int, object]) -> float:
    exact = {a: Fraction(v) for a, v in values.items()}
    return float(sum((m.evaluate(exact) for m in monomials), Fraction(0)))


def drop_agent(spec: PolynomialSpec, j: int) -> PolynomialSpec:
    """Remove agent ``j`` by setting all its exponents to zero.

    The dropped neighbor's bivariate terms keep only their owner-variable
    part and move to the smallest remaining neighbor; in each product the
    dropped factor collapses to the sum of its coefficients, which is
    folded into the owner's factor.  Dropping an absent agent is a no-op.
    """
    if j not in spec.neighbors:
        return spec
    if j == spec.owner:
        raise InvalidSupport("the query owner cannot be dropped")
    neighbors = tuple(a for a in spec.neighbors if a != j)
    if not neighbors:
        raise InvalidSupport("dropping the last neighbor leaves nothing to query")
    dropped = spec.part(j)
    parts = []
    for part in spec.bivariate:
        if part.neighbor == j:
            continue
        terms = list(part.terms)
        if part.neighbor == neighbors[0]:
            terms += [(c, pi, 0) for c, pi, _ in dropped.terms]
        parts.append(BivariatePart(part.neighbor, tuple(terms)))

    products = []
    for term in spec.multiplicative:
        collapsed = sum((c for c, _ in term.factor(j).poly.terms), Fraction(0))
        if collapsed == 0:
            continue
        factors = []
        for agent, f in term.factors:
            if agent == j:
                continue
            if agent == spec.owner and collapsed != 1:
                f = Factor(f.poly.scaled(collapsed), sensitive=True)
            factors.append((agent, f))
        products.append(MultiplicativeTerm(len(products) + 1, tuple(factors)))

    features = spec.features
    if features is not None:
        features = tuple((a, m) for a, m in features if a != j)
    return replace(spec, neighbors=neighbors, bivariate=tuple(parts), multiplicative=tuple(products),
                   features=features)
