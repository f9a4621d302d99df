"""Consensus on a function of the states, driven by private queries.

Agent ``i`` applies ``u_i = (1 / dJ/dx_i) * sum_j a_ij (x_j - x_i)`` with a
forward-Euler step ``h``.  The sum over neighbors is the private query;
the gradient factor is the owner's own coefficient.
"""

from __future__ import annotations

import random
import time
from fractions import Fraction

from ..codec import FieldParams
from ..errors import ConfigError, GradientGuard
from ..netsim import Network, Topology, ring
from ..poly import PolynomialSpec, evaluate_plain, from_parts
from ..protocol import QuerySession, error_bound, make_agents
from .game import DeviationBound, RunReport, derivative_terms, step_jacobian

GUARD = 1e-9


def gradient(J: str, nodes, weights=None) -> dict:
    """``dJ/dx_i`` for the whitelisted linear objectives."""
    if J == "mean":
        return {i: Fraction(1, len(nodes)) for i in nodes}
    if J == "weighted_mean":
        if not weights:
            raise ConfigError("weighted_mean needs weights")
        total = sum(Fraction(weights[i]) for i in nodes)
        return {i: Fraction(weights[i]) / total for i in nodes}
    raise ConfigError(f"objective {J!r} is not supported")


def controller_spec(i: int, topo: Topology, grad: Fraction, adjacency=None) -> PolynomialSpec:
    if abs(grad) < GUARD:
        raise GradientGuard(f"|dJ/dx_{i}| = {float(abs(grad))} below {GUARD}")
    nbrs = topo.neighbors(i)
    g = 1 / grad
    a = {j: Fraction((adjacency or {}).get((i, j), 1)) for j in nbrs}
    parts = {j: [(g * a[j], 0, 1)] for j in nbrs}
    # the owner-only term rides on the first neighbor's part
    parts[nbrs[0]].append((-g * sum(a.values()), 1, 0))
    return from_parts(i, nbrs, parts, [])


def run_consensus(topology: Topology | None = None, x0=None, K: int = 100, h: float = 0.1, J: str = "mean",
                  weights=None, seed: int = 0, sigma: int = 512, omega_bits: int = 200, frac_bits: int = 16,
                  share_mode: str = "prf", private: bool = True) -> RunReport:
    topo = topology or ring(5)
    rng = random.Random(f"{seed}/consensus")
    if x0 is None:
        x0 = [rng.uniform(-1, 1) for _ in topo.nodes]
    if len(x0) != len(topo.nodes):
        raise ConfigError("one initial state per node is required")
    grads = gradient(J, topo.nodes, weights)
    specs = {i: controller_spec(i, topo, grads[i]) for i in topo.nodes}

    def step(x, u):
        return {i: x[i] + h * u[i] for i in topo.nodes}

    xq = dict(zip(topo.nodes, x0))
    plain = [list(xq.values())]
    for _ in range(K):
        xq = step(xq, {i: evaluate_plain(specs[i], xq) for i in topo.nodes})
        plain.append(list(xq.values()))
    report = RunReport(private=[list(x0)], plain=plain, nodes=topo.nodes)
    if private:
        params = FieldParams.generate(omega_bits, random.Random(f"{seed}/omega"), frac_bits)
        net = Network(topo, seed=seed)
        agents = make_agents(topo.nodes, seed)
        sessions = {i: QuerySession(specs[i], net, agents, params, key_bits=sigma, share_mode=share_mode,
                                    seed=seed) for i in topo.nodes}
        # the controller is linear, so the step Jacobian is constant and the bound exact
        jac = step_jacobian({i: derivative_terms(specs[i]) for i in topo.nodes},
                          {i: specs[i].members for i in topo.nodes}, dict.fromkeys(topo.nodes, 0.0), -h,
                          dict(zip(topo.nodes, x0)), topo.nodes)
        tracker = DeviationBound(len(topo.nodes))
        start = time.perf_counter()
        xp = dict(zip(topo.nodes, x0))
        for k in range(K):
            for a in topo.nodes:
                agents[a].set_value(xp[a])
            u = {}
            step_err = []
            for i in topo.nodes:
                res = sessions[i].run(k)
                u[i] = res.value
                err = abs(res.value - evaluate_plain(specs[i], xp))
                eb = error_bound(specs[i], xp, params)
                report.query_error = max(report.query_error, err)
                report.query_bound_ok &= err <= eb * (1 + 1e-9) + 1e-12
                step_err.append(h * eb)
                report.messages += res.message_count
                report.bytes += res.byte_count
                report.ciphertext_bytes += res.ciphertext_bytes
                report.share_bytes += res.share_bytes
            xp = step(xp, u)
            report.private.append(list(xp.values()))
            bound = tracker.step(jac, step_err)
            dev = max(abs(p - q) for p, q in zip(report.private[-1], plain[k + 1]))
            report.max_deviation = max(report.max_deviation, dev)
            report.deviation_ok &= dev <= bound
            report.deviation_bound = max(report.deviation_bound, bound)
        report.seconds = time.perf_counter() - start
    else:
        report.private = plain
    plain_spread = [max(x) - min(x) for x in plain]
    private_spread = [max(x) - min(x) for x in report.private]
    slack = 2 * report.deviation_bound  # rounding may jitter the private spread by this much
    report.extra = {
        "K": K, "h": h, "J": J, "seed": seed,
        "final_spread_plain": plain_spread[-1], "final_spread_private": private_spread[-1],
        "plain_spread_nonincreasing": all(b <= a + 1e-12 for a, b in zip(plain_spread, plain_spread[1:])),
        "private_spread_nonincreasing": all(b <= a + slack for a, b in zip(private_spread, private_spread[1:])),
    }
    return report
