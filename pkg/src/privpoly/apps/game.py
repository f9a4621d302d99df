"""Projected-gradient play of a networked quadratic game.

Player ``i`` minimises ``a_i x_i**2 + x_i * sum_j c_ij x_j + prod_j W_j``
over ``[0, 2]``.  The coupling term ``sum_j P_j + prod_j W_j`` of its
gradient depends on the neighbors' actions and is evaluated privately at
every step; a plain run with the same parameters is computed alongside.
"""

from __future__ import annotations

import csv
import json
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..codec import FieldParams
from ..errors import ConfigError, EncodingOverflow
from ..netsim import Network, Topology, circulant
from ..poly import PolynomialSpec, UnivariatePoly, evaluate_plain, expand, from_parts
from ..protocol import QuerySession, error_bound, make_agents


@dataclass
class RunReport:
    private: list  # K+1 state vectors
    plain: list
    query_error: float = 0.0  # max |private query - exact query at the same state|
    query_bound_ok: bool = True
    max_deviation: float = 0.0  # max over k of |x_private(k) - x_plain(k)|_inf
    deviation_bound: float = 0.0
    deviation_ok: bool = True  # every step within its own bound
    seconds: float = 0.0
    messages: int = 0
    bytes: int = 0
    ciphertext_bytes: int = 0
    share_bytes: int = 0
    nodes: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def within_quantization(self) -> bool:
        return self.query_bound_ok and self.deviation_ok

    def summary(self) -> dict:
        return {
            "steps": len(self.private) - 1, "query_error": self.query_error,
            "query_bound_ok": self.query_bound_ok, "max_deviation": self.max_deviation,
            "deviation_bound": self.deviation_bound, "deviation_ok": self.deviation_ok,
            "within_quantization": self.within_quantization,
            "seconds": self.seconds, "messages": self.messages, "bytes": self.bytes,
            "ciphertext_bytes": self.ciphertext_bytes, "share_bytes": self.share_bytes, **self.extra,
        }

    def write(self, out_dir, stem: str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        with open(out / f"{stem}_trajectories.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", *(f"private_{a}" for a in self.nodes), *(f"plain_{a}" for a in self.nodes)])
            for k, (xp, xq) in enumerate(zip(self.private, self.plain)):
                w.writerow([k, *xp, *xq])


def game_topology(N: int) -> Topology:
    """Circulant graph: offsets 1 and N/2 (3-regular) for even N, a ring for odd N."""
    if N < 3:
        raise ConfigError("the game needs at least three players")
    offsets = (1, -1, N // 2) if N % 2 == 0 and N > 4 else (1, -1)
    return circulant(N, offsets)


@dataclass(frozen=True)
class PlayerParams:
    a: Fraction
    c: dict  # neighbor -> c_ij
    w_own: tuple  # (c_i0, c_i1)
    w: dict  # neighbor -> (c_j1, c_j2)


def derivative_terms(spec: PolynomialSpec) -> list:
    return [(float(c), dict(p)) for p, c in expand(spec).items()]


def _partial(terms, a, x) -> float:
    total = 0.0
    for c, exps in terms:
        e = exps.get(a, 0)
        if e:
            v = c * e * x[a] ** (e - 1)
            for b, f in exps.items():
                if b != a:
                    v *= x[b] ** f
            total += v
    return total


def step_jacobian(terms: dict, members: dict, diag: dict, scale: float, x: dict, nodes) -> np.ndarray:
    """Jacobian of ``x -> x - scale * (diag * x + g(x))`` at ``x``; ``g_i`` given by its monomials."""
    pos = {a: k for k, a in enumerate(nodes)}
    J = np.eye(len(nodes))
    for i in nodes:
        r = pos[i]
        J[r, r] -= scale * diag[i]
        for a in members[i]:
            J[r, pos[a]] -= scale * _partial(terms[i], a, x)
    return J


class DeviationBound:
    """First-order bound on ``|x_private(k) - x_plain(k)|_inf``.

    The state error obeys ``e(k+1) = J_k e(k) + f_k`` with ``|f_k| <= w_k``
    componentwise, where ``w_k`` is the step size times the per-query error
    bound and ``J_k`` the step Jacobian.  Keeping every transfer matrix
    ``J_{k-1}...J_{s+1}`` preserves the sign cancellations a norm product
    would lose.
    """

    def __init__(self, n: int):
        self.n = n
        self.transfer = np.zeros((0, n, n))
        self.weights = np.zeros((0, n))

    def step(self, J: np.ndarray, w) -> float:
        if len(self.transfer):
            self.transfer = J @ self.transfer
        self.transfer = np.concatenate([self.transfer, np.eye(self.n)[None]])
        self.weights = np.concatenate([self.weights, np.asarray(w, dtype=float)[None]])
        return float(np.einsum("sij,sj->i", np.abs(self.transfer), self.weights).max())


def draw_players(topo: Topology, low: float, high: float, rng: random.Random) -> dict[int, PlayerParams]:
    def u():
        return Fraction(rng.uniform(low, high))
    out = {}
    for i in topo.nodes:
        nbrs = topo.neighbors(i)
        out[i] = PlayerParams(u(), {j: u() for j in nbrs}, (u(), u()), {j: (u(), u()) for j in nbrs})
    return out


def coupling_spec(i: int, nbrs, p: PlayerParams) -> PolynomialSpec:
    """``sum_j c_ij x_j + (c_i0 + 2 c_i1 x_i) prod_j (c_j1 x_j + c_j2 x_j**2)``."""
    product = {i: UnivariatePoly(((p.w_own[0], 0), (2 * p.w_own[1], 1)))}
    for j in nbrs:
        product[j] = UnivariatePoly(((p.w[j][0], 1), (p.w[j][1], 2)))
    return from_parts(i, nbrs, {j: [(p.c[j], 0, 1)] for j in nbrs}, [product])


def run_game(N: int = 30, K: int = 500, tau: float = 0.01, low: float = 0.0, high: float = 2.0,
             lam: float = 0.0, seed: int = 0, sigma: int = 512, omega_bits: int = 200, frac_bits: int = 16,
             share_mode: str = "prf", private: bool = True) -> RunReport:
    rng = random.Random(f"{seed}/game")
    topo = game_topology(N)
    players = draw_players(topo, low, high, rng)
    x0 = [rng.uniform(low, high) for _ in topo.nodes]
    specs = {i: coupling_spec(i, topo.neighbors(i), players[i]) for i in topo.nodes}
    params = FieldParams.generate(omega_bits, random.Random(f"{seed}/omega"), frac_bits)

    def _unprojected(x: dict, coupling: dict) -> dict:
        return {i: x[i] - tau * (2 * float(players[i].a) * x[i] + coupling[i] - lam) for i in topo.nodes}

    def step(x: dict, coupling: dict) -> dict:
        return {i: min(high, max(low, v)) for i, v in _unprojected(x, coupling).items()}

    xq = dict(zip(topo.nodes, x0))
    plain = [list(xq.values())]
    for _ in range(K):
        xq = step(xq, {i: evaluate_plain(specs[i], xq) for i in topo.nodes})
        plain.append(list(xq.values()))
    report = RunReport(private=[list(x0)], plain=plain, nodes=topo.nodes)
    if not private:
        report.private = plain
        return report

    net = Network(topo, seed=seed)
    agents = make_agents(topo.nodes, seed)
    sessions = {i: QuerySession(specs[i], net, agents, params, key_bits=sigma, share_mode=share_mode, seed=seed)
                for i in topo.nodes}
    terms = {i: derivative_terms(specs[i]) for i in topo.nodes}
    members = {i: specs[i].members for i in topo.nodes}
    diag = {i: 2 * float(players[i].a) for i in topo.nodes}
    tracker = DeviationBound(len(topo.nodes))
    start = time.perf_counter()
    xp = dict(zip(topo.nodes, x0))
    for k in range(K):
        for a in topo.nodes:
            agents[a].set_value(xp[a])
        coupling = {}
        step_err = []
        for i in topo.nodes:
            try:
                res = sessions[i].run(k)
            except EncodingOverflow as exc:
                raise EncodingOverflow(f"step {k}, player {i}: {exc}") from exc
            coupling[i] = res.value
            err = abs(res.value - evaluate_plain(specs[i], xp))
            eb = error_bound(specs[i], xp, params)
            report.query_error = max(report.query_error, err)
            report.query_bound_ok &= err <= eb * (1 + 1e-9) + 1e-12
            step_err.append(tau * eb)
            report.messages += res.message_count
            report.bytes += res.byte_count
            report.ciphertext_bytes += res.ciphertext_bytes
            report.share_bytes += res.share_bytes
        xq = dict(zip(topo.nodes, plain[k]))
        # linearize midway between the two states: exact up to second order in the deviation
        J = step_jacobian(terms, members, diag, tau, {a: (xp[a] + xq[a]) / 2 for a in topo.nodes}, topo.nodes)
        pre_p = _unprojected(xp, coupling)
        pre_q = _unprojected(xq, {i: evaluate_plain(specs[i], xq) for i in topo.nodes})
        for r, i in enumerate(topo.nodes):
            # both clamped to the same bound: that coordinate agrees exactly
            if (pre_p[i] <= low and pre_q[i] <= low) or (pre_p[i] >= high and pre_q[i] >= high):
                J[r, :] = 0.0
                step_err[r] = 0.0
        bound = tracker.step(J, step_err)
        xp = step(xp, coupling)
        report.private.append(list(xp.values()))
        dev = max(abs(p - q) for p, q in zip(report.private[-1], plain[k + 1]))
        report.max_deviation = max(report.max_deviation, dev)
        report.deviation_ok &= dev <= bound
        report.deviation_bound = max(report.deviation_bound, bound)
    report.seconds = time.perf_counter() - start
    decay = decay_ratios(report.private)
    # the tracked player is the first node, as in a single-player trajectory plot
    report.extra = {"N": N, "K": K, "tau": tau, "seed": seed, "sigma": sigma, "share_mode": share_mode,
                    "decay": decay, "tracked_player": topo.nodes[0], "tracked_decay": decay[0]}
    return report


def decay_ratios(traj: list) -> list:
    """``|x_i(K)| / |x_i(0)|`` per player."""
    first, last = traj[0], traj[-1]
    return [abs(b) / abs(a) if a else 0.0 for a, b in zip(first, last)]
