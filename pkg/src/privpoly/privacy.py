"""Identifiability of private values under collusion.

A coalition of corrupt agents knows its own values and the results of
its own queries.  Folding the known parts into the right-hand side
leaves a semi-linear system ``A z = b`` in the moment vectors
``z = [P(x_1); ...; P(x_m)]`` of the noncorrupt agents, with
``P(a) = (a, a**2, ..., a**r)``.  The solution set of the linear
relaxation is ``z* + im(Pi)`` with ``Pi = I - pinv(A) A``.

Linear algebra here is exact over ``Fraction``; floats appear only in
the falsifier for degree ``r >= 2``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .errors import OracleInconclusive, StructureViolation
from .poly import PolynomialSpec, expand

Matrix = list  # list of rows of Fraction


# -- exact matrices -------------------------------------------------------

def to_fraction_matrix(rows) -> Matrix:
    return [[Fraction(v) for v in row] for row in rows]


def identity(n: int) -> Matrix:
    return [[Fraction(int(r == c)) for c in range(n)] for r in range(n)]


def transpose(M: Matrix) -> Matrix:
    return [list(col) for col in zip(*M)] if M else []


def matmul(A: Matrix, B: Matrix) -> Matrix:
    Bt = transpose(B)
    return [[sum((a * b for a, b in zip(row, col)), Fraction(0)) for col in Bt] for row in A]


def matsub(A: Matrix, B: Matrix) -> Matrix:
    return [[a - b for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def rref(M: Matrix) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form and pivot columns."""
    R = [list(row) for row in M]
    rows = len(R)
    cols = len(R[0]) if R else 0
    pivots = []
    r = 0
    for c in range(cols):
        p = next((k for k in range(r, rows) if R[k][c] != 0), None)
        if p is None:
            continue
        R[r], R[p] = R[p], R[r]
        lead = R[r][c]
        R[r] = [v / lead for v in R[r]]
        for k in range(rows):
            if k != r and R[k][c] != 0:
                f = R[k][c]
                R[k] = [a - f * b for a, b in zip(R[k], R[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    return R, pivots


def rank(M: Matrix) -> int:
    return len(rref(M)[1])


def inverse(M: Matrix) -> Matrix:
    n = len(M)
    aug = [list(row) + ident for row, ident in zip(M, identity(n))]
    R, pivots = rref(aug)
    if pivots[:n] != list(range(n)):
        raise ZeroDivisionError("matrix is singular")
    return [row[n:] for row in R]


def pinv(A: Matrix) -> Matrix:
    """Moore-Penrose inverse from the full-rank factorization ``A = C F``."""
    rows = len(A)
    cols = len(A[0]) if A else 0
    R, pivots = rref(A)
    if not pivots:
        return [[Fraction(0)] * rows for _ in range(cols)]
    C = [[row[c] for c in pivots] for row in A]
    F = R[:len(pivots)]
    Ct, Ft = transpose(C), transpose(F)
    return matmul(matmul(Ft, inverse(matmul(F, Ft))), matmul(inverse(matmul(Ct, C)), Ct))


def projector(A: Matrix) -> Matrix:
    """``I - pinv(A) A``: orthogonal projector onto the null space of ``A``."""
    A = to_fraction_matrix(A)
    cols = len(A[0])
    return matsub(identity(cols), matmul(pinv(A), A))


def _matvec(A: Matrix, v) -> list:
    return [sum((a * x for a, x in zip(row, v)), Fraction(0)) for row in A]


# -- instances ------------------------------------------------------------

def moment(alpha, r: int) -> list:
    return [alpha**p for p in range(1, r + 1)]


@dataclass(frozen=True)
class CollusionInstance:
    corrupt: tuple
    noncorrupt: tuple
    r: int
    A: tuple  # n rows, m*r columns, Fraction entries
    b: tuple
    x_star: tuple | None = None  # true noncorrupt values, harness only

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.A), len(self.A[0]) if self.A else 0

    def moments(self, x) -> list:
        return [v for xi in x for v in moment(xi, self.r)]

    def residual(self, x) -> float:
        z = np.array([float(v) for v in self.moments(x)])
        A = np.array([[float(v) for v in row] for row in self.A])
        return float(np.linalg.norm(A @ z - np.array([float(v) for v in self.b])))

    def particular(self) -> list:
        if self.x_star is not None:
            return self.moments([Fraction(v) for v in self.x_star])
        return _matvec(pinv(list(self.A)), list(self.b))


def instance_from_matrix(A, x_star, r: int = 1, corrupt=None, noncorrupt=None) -> CollusionInstance:
    """Instance with ``b = A P(x*)``; handy for tests and constructed cases."""
    A = to_fraction_matrix(A)
    x_star = tuple(Fraction(v) for v in x_star)
    z = [v for xi in x_star for v in moment(xi, r)]
    b = tuple(_matvec(A, z))
    noncorrupt = tuple(noncorrupt) if noncorrupt else tuple(range(1, len(x_star) + 1))
    corrupt = tuple(corrupt) if corrupt else tuple(-(k + 1) for k in range(len(A)))
    return CollusionInstance(corrupt, noncorrupt, r, tuple(tuple(row) for row in A), b, x_star)


def build_system(queries: Mapping[int, PolynomialSpec], corrupt_values: Mapping[int, object],
                 results: Mapping[int, object] | None = None, true_values: Mapping[int, object] | None = None,
                 topology=None) -> CollusionInstance:
    """Assemble ``A z = b`` from the corrupt agents' queries.

    ``queries`` maps each corrupt query owner to its (power-form) spec.
    Monomials made only of corrupt variables fold into ``b``; every other
    monomial may contain one noncorrupt variable.  ``results`` defaults to
    the true query values computed from ``true_values``.
    """
    corrupt = tuple(sorted(corrupt_values))
    if topology is not None:
        for c in corrupt:
            if c not in topology.nodes:
                raise StructureViolation(f"corrupt agent {c} is not in the network")
    known = {a: Fraction(v) for a, v in corrupt_values.items()}
    rows = []
    nc_vars: set = set()
    for owner in sorted(queries):
        if owner not in known:
            raise StructureViolation(f"query owner {owner} is not corrupt")
        terms = []
        const = Fraction(0)
        for powers, c in expand(queries[owner]).items():
            free = [(a, e) for a, e in powers if a not in known]
            if len(free) > 1:
                raise StructureViolation(f"monomial {dict(powers)} of agent {owner}'s query mixes noncorrupt agents")
            xi = c
            for a, e in powers:
                if a in known:
                    xi *= known[a] ** e
            if free:
                terms.append((free[0], xi))
                nc_vars.add(free[0][0])
            else:
                const += xi
        rows.append((owner, terms, const))
    noncorrupt = tuple(sorted(nc_vars))
    r = max([e for _, terms, _ in rows for (_, e), _ in terms] + [1])
    col = {a: k for k, a in enumerate(noncorrupt)}
    A, b = [], []
    for owner, terms, const in rows:
        row = [Fraction(0)] * (len(noncorrupt) * r)
        for (a, e), xi in terms:
            row[col[a] * r + e - 1] += xi
        if results is not None:
            value = Fraction(results[owner])
        elif true_values is not None:
            value = const + sum((xi * Fraction(true_values[a]) ** e for (a, e), xi in terms), Fraction(0))
        else:
            raise StructureViolation("need query results or true values to form b")
        A.append(tuple(row))
        b.append(value - const)
    x_star = None
    if true_values is not None:
        x_star = tuple(Fraction(true_values[a]) for a in noncorrupt)
    return CollusionInstance(corrupt, noncorrupt, r, tuple(A), tuple(b), x_star)


# -- verdicts -------------------------------------------------------------

@dataclass(frozen=True)
class Identified:
    agent: int
    certificate: str = "exact"


@dataclass(frozen=True)
class NotIdentified:
    agent: int
    witness: tuple  # alternative noncorrupt values satisfying the system


@dataclass(frozen=True)
class Unknown:
    agent: int
    reason: str = ""


def _index(inst: CollusionInstance, agent) -> int:
    try:
        return inst.noncorrupt.index(agent)
    except ValueError:
        raise KeyError(f"agent {agent} is not a noncorrupt variable of the instance") from None


def check_affine(inst: CollusionInstance, agent) -> Identified | NotIdentified:
    if inst.r != 1:
        raise ValueError("check_affine needs a degree-one instance")
    idx = _index(inst, agent)
    P = projector(list(inst.A))
    row = P[idx]
    if all(v == 0 for v in row):
        return Identified(agent)
    base = inst.particular()
    witness = tuple(base[k] + P[k][idx] for k in range(len(base)))  # column idx of a symmetric P
    assert _matvec(list(inst.A), witness) == list(inst.b)
    return NotIdentified(agent, witness)


def _block(P: Matrix, idx: int, r: int) -> Matrix:
    return P[idx * r:(idx + 1) * r]


def check_general(inst: CollusionInstance, agent, *, box=(-10.0, 10.0), grid_points: int = 10_000,
                  max_candidates: int = 40, tol: float = 1e-9, min_gap: float = 1e-6):
    """Certificate, falsifier, or ``Unknown``.

    ``Identified`` only when the block of ``Pi`` for the agent is exactly
    zero.  Otherwise a grid over the agent's value filters candidates whose
    moment vector fits the projected affine set, and least squares over
    the other agents tries to complete each into a full solution.
    """
    if inst.r == 1:
        return check_affine(inst, agent)
    idx = _index(inst, agent)
    r = inst.r
    P = projector(list(inst.A))
    B = _block(P, idx, r)
    if all(v == 0 for row in B for v in row):
        return Identified(agent)

    base = [float(v) for v in inst.particular()]
    zi = np.array(base[idx * r:(idx + 1) * r])
    Bf = np.array([[float(v) for v in row] for row in B])
    U, s, _ = np.linalg.svd(Bf)
    basis = U[:, s > 1e-12 * max(1.0, s.max())]
    x_true = float(inst.x_star[idx]) if inst.x_star is not None else None
    if x_true is None:
        # any realisable point will do as the reference; take the moment-consistent one if present
        x_true = zi[0]

    def filt(alpha: float) -> float:
        d = np.array(moment(alpha, r)) - zi
        return float(np.linalg.norm(d - basis @ (basis.T @ d)))

    grid = np.linspace(box[0], box[1], grid_points)
    scores = np.array([filt(a) for a in grid])
    order = [k for k in np.argsort(scores) if abs(grid[k] - x_true) > 10 * min_gap]
    step = grid[1] - grid[0]
    tried = 0
    m = len(inst.noncorrupt)
    A = np.array([[float(v) for v in row] for row in inst.A])
    b = np.array([float(v) for v in inst.b])

    def full_residual(x):
        z = np.concatenate([np.array(moment(v, r)) for v in x])
        return A @ z - b

    seen = []
    for k in order:
        if tried >= max_candidates:
            break
        a0 = grid[k]
        if any(abs(a0 - s0) < 2 * step for s0 in seen):
            continue
        seen.append(a0)
        tried += 1
        res = minimize_scalar(filt, bounds=(a0 - step, a0 + step), method="bounded",
                              options={"xatol": 1e-14})
        alpha = float(res.x)
        if abs(alpha - x_true) < min_gap:
            continue
        others = [k2 for k2 in range(m) if k2 != idx]
        start = np.array([float(inst.x_star[k2]) if inst.x_star is not None else 0.0 for k2 in others])

        def resid_others(y, alpha=alpha):
            x = np.insert(y, idx, alpha) if others else np.array([alpha])
            return full_residual(x)

        if others:
            fit = least_squares(resid_others, start, xtol=1e-15, ftol=1e-15, gtol=1e-15)
            x = np.insert(fit.x, idx, alpha)
        else:
            x = np.array([alpha])
        polish = least_squares(full_residual, x, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        x = polish.x
        if np.linalg.norm(full_residual(x)) <= tol and abs(x[idx] - x_true) >= min_gap:
            return NotIdentified(agent, tuple(float(v) for v in x))
    return Unknown(agent, f"no alternative found among {tried} candidates in {box}")


def brute_force_verdict(inst: CollusionInstance, agent, grid: Sequence = range(-6, 7)):
    """Enumerate the grid for exact solutions and compare the agent's coordinate."""
    idx = _index(inst, agent)
    A = list(inst.A)
    b = list(inst.b)
    grid = list(grid)
    integral = all(v.denominator == 1 for v in (*b, *(a for row in A for a in row))) and all(
        float(g).is_integer() for g in grid)
    if integral:
        # exact in int64 for the small boxes this oracle is meant for
        pts = np.array(list(itertools.product([int(g) for g in grid], repeat=len(inst.noncorrupt))), dtype=np.int64)
        Z = np.concatenate([pts[:, [k]] ** p for k in range(pts.shape[1]) for p in range(1, inst.r + 1)], axis=1)
        Ai = np.array([[int(v) for v in row] for row in A], dtype=np.int64)
        bi = np.array([int(v) for v in b], dtype=np.int64)
        hit = np.all(Z @ Ai.T == bi, axis=1)
        sols = [tuple(int(v) for v in p) for p in pts[hit]]
    else:
        sols = []
        for x in itertools.product(grid, repeat=len(inst.noncorrupt)):
            z = [v for xi in x for v in moment(Fraction(xi), inst.r)]
            if _matvec(A, z) == b:
                sols.append(x)
    if not sols:
        raise OracleInconclusive("no grid point solves the system")
    values = {s[idx] for s in sols}
    if len(values) == 1:
        return Identified(agent, certificate="grid")
    ref = inst.x_star[idx] if inst.x_star is not None else sols[0][idx]
    witness = next((s for s in sols if s[idx] != ref), sols[0])
    return NotIdentified(agent, tuple(Fraction(v) for v in witness))


def verdict_table(inst: CollusionInstance, **kwargs) -> list[dict]:
    out = []
    for a in inst.noncorrupt:
        v = check_general(inst, a, **kwargs)
        row = {"agent": a, "verdict": type(v).__name__}
        if isinstance(v, NotIdentified):
            row["witness"] = [float(w) for w in v.witness]
        out.append(row)
    return out
