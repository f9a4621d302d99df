"""Timing and traffic sweep over key length and neighborhood size."""

from __future__ import annotations

import csv
import random
import statistics
import time
from pathlib import Path

from ..codec import FieldParams
from ..netsim import Network, star
from ..paillier import keygen
from ..poly import UnivariatePoly, from_parts
from ..protocol import QuerySession, make_agents

FIELDS = ["sigma", "neighbors", "median_seconds", "messages", "ciphertext_bytes", "share_bytes"]


def bench_spec(n: int, rng: random.Random):
    """``c_j x_j`` for every neighbor plus one product over the owner and two neighbors."""
    nbrs = list(range(1, n + 1))
    biv = {j: [(rng.randint(1, 9), 0, 1)] for j in nbrs}
    product = {
        0: UnivariatePoly.monomial(1, rng.randint(1, 9)),
        1: UnivariatePoly(((rng.randint(1, 9), 1), (rng.randint(1, 9), 2))),
        2: UnivariatePoly.monomial(1),
    }
    return from_parts(0, nbrs, biv, [product])


def bench_cell(sigma: int, n: int, runs: int = 5, seed: int = 0, omega_bits: int = 200,
               share_mode: str = "direct", keys=None) -> dict:
    rng = random.Random(f"{seed}/bench/{sigma}/{n}")
    spec = bench_spec(n, rng)
    params = FieldParams.generate(omega_bits, random.Random(f"{seed}/omega"))
    net = Network(star(0, spec.neighbors), seed=seed)
    agents = make_agents(net.topology.nodes, seed)
    keys = keys or keygen(sigma, random.Random(f"{seed}/bench-key/{sigma}"))
    session = QuerySession(spec, net, agents, params, keys=keys, share_mode=share_mode, seed=seed, verify=False)
    values = {a: rng.uniform(-2, 2) for a in spec.members}
    times = []
    res = None
    for k in range(runs):
        t0 = time.perf_counter()
        res = session.run(k, values)
        times.append(time.perf_counter() - t0)
    return {"sigma": sigma, "neighbors": n, "median_seconds": statistics.median(times),
            "messages": res.message_count, "ciphertext_bytes": res.ciphertext_bytes, "share_bytes": res.share_bytes}


def run_bench(sigmas=(512, 1024, 2048), sizes=(3, 9, 27), runs: int = 5, seed: int = 0,
              omega_bits: int = 200, share_mode: str = "direct") -> list[dict]:
    if runs < 5:
        raise ValueError("medians need at least five runs")
    rows = []
    for sigma in sigmas:
        keys = keygen(sigma, random.Random(f"{seed}/bench-key/{sigma}"))
        for n in sizes:
            rows.append(bench_cell(sigma, n, runs, seed, omega_bits, share_mode, keys))
    return rows


def trend_ratios(rows: list[dict]) -> dict:
    """Time and byte ratios used to check the scaling trends."""
    cell = {(r["sigma"], r["neighbors"]): r for r in rows}
    out = {}
    if (2048, 9) in cell and (1024, 9) in cell:
        out["time_sigma_2048_over_1024"] = cell[(2048, 9)]["median_seconds"] / cell[(1024, 9)]["median_seconds"]
        out["bytes_sigma_2048_over_1024"] = cell[(2048, 9)]["ciphertext_bytes"] / cell[(1024, 9)]["ciphertext_bytes"]
    if (1024, 27) in cell and (1024, 9) in cell:
        out["time_n_27_over_9"] = cell[(1024, 27)]["median_seconds"] / cell[(1024, 9)]["median_seconds"]
        out["bytes_n_27_over_9"] = cell[(1024, 27)]["ciphertext_bytes"] / cell[(1024, 9)]["ciphertext_bytes"]
    return out


def write_csv(rows: list[dict], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS)
        w.writeheader()
        w.writerows(rows)
