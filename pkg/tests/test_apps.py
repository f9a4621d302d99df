import json
import random
from pathlib import Path

import pytest

from privpoly.apps import cli
from privpoly.apps.bench import bench_cell, run_bench, trend_ratios, write_csv
from privpoly.apps.consensus import controller_spec, gradient, run_consensus
import numpy as np

from privpoly.apps.game import (DeviationBound, coupling_spec, decay_ratios, derivative_terms, draw_players,
                               game_topology, run_game, step_jacobian)
from privpoly.apps.scenario import load_config, run_scenario
from privpoly.errors import ConfigError, GradientGuard
from privpoly.netsim import ring
from privpoly.poly import evaluate_plain

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_example1_scenario_with_dropout():
    cfg = load_config(CONFIGS / "example1.json")
    recs = run_scenario(cfg)
    assert [r["result"] for r in recs[:2]] == [13, 13]
    # W_4 = x_4 and P_4 = 4 x_1 x_4**3 both evaluate to their x_4 = 1 values
    assert recs[2]["result"] == 13
    assert recs[2]["events"][0]["agent"] == 4


@pytest.mark.parametrize("patch", [{"sigma": 256}, {"share_mode": "carrier-pigeon"}, {"horizon": 0},
                                   {"dropouts": [{"agent": 1, "k": 0}]}, {"values": {"9": 1}}])
def test_config_validation(patch):
    raw = json.loads((CONFIGS / "example1.json").read_text())
    raw.update(patch)
    with pytest.raises(ConfigError):
        load_config(raw)


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--config", str(CONFIGS / "example1.json"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "queries.jsonl").read_text().splitlines()
    assert [json.loads(x)["result"] for x in lines] == [13, 13, 13]
    assert cli.main(["run", "--config", str(CONFIGS / "example1.json"), "--sigma", "256",
                     "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    lonely = {"topology": {"nodes": [1, 2], "edges": [[1, 2]]},
              "queries": {"1": [{"coeff": 1, "exps": {"2": 1}}]}, "values": {"1": 1, "2": 1}}
    path = tmp_path / "lonely.json"
    path.write_text(json.dumps(lonely))
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_ABORT
    assert cli.main(["analyze", "--config", str(CONFIGS / "example1.json"), "--corrupt", "1",
                     "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    capsys.readouterr()


def test_cli_analyze_and_keygen(tmp_path, capsys):
    assert cli.main(["analyze", "--config", str(CONFIGS / "collusion.json"), "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "verdicts.json").read_text())
    assert {r["agent"]: r["verdict"] for r in table} == {2: "NotIdentified", 3: "Identified", 4: "NotIdentified"}
    assert (tmp_path / "verdicts.csv").read_text().startswith("agent,verdict")
    assert cli.main(["keygen", "--sigma", "512", "--out", str(tmp_path)]) == 0
    pk = json.loads((tmp_path / "public_key.json").read_text())
    assert int(pk["n"]).bit_length() == 512
    capsys.readouterr()


def test_cli_consensus(tmp_path, capsys):
    assert cli.main(["consensus", "--steps", "20", "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["within_quantization"]
    assert (tmp_path / "consensus_trajectories.csv").exists()


def test_consensus_converges_privately():
    rep = run_consensus(K=100)
    assert rep.within_quantization
    assert rep.extra["plain_spread_nonincreasing"] and rep.extra["private_spread_nonincreasing"]
    assert rep.extra["final_spread_private"] < 1e-3
    mean0 = sum(rep.private[0]) / 5
    assert sum(rep.private[-1]) / 5 == pytest.approx(mean0, abs=1e-3)


def test_consensus_input_vanishes_at_agreement():
    topo = ring(5)
    g = gradient("mean", topo.nodes)
    for i in topo.nodes:
        assert evaluate_plain(controller_spec(i, topo, g[i]), {a: 0.7 for a in topo.nodes}) == 0


def test_weighted_mean_and_guard():
    topo = ring(4)
    with pytest.raises(GradientGuard):
        controller_spec(1, topo, gradient("weighted_mean", topo.nodes, {1: 0, 2: 1, 3: 1, 4: 1})[1])
    rep = run_consensus(topology=topo, x0=[0.0, 1.0, 0.5, -0.5], K=60, J="weighted_mean",
                        weights={1: 1, 2: 2, 3: 1, 4: 2}, private=True)
    assert rep.within_quantization
    with pytest.raises(ConfigError):
        gradient("max", topo.nodes)


def test_small_game():
    rep = run_game(N=6, K=40)
    assert rep.within_quantization
    assert len(rep.private) == 41
    assert all(0 <= v <= 2 for x in rep.private for v in x)
    again = run_game(N=6, K=40)
    assert again.private == rep.private and again.plain == rep.plain
    assert game_topology(30).degree(1) == 3 and game_topology(5).degree(1) == 2
    assert decay_ratios([[2.0, 1.0], [0.1, 0.0]]) == [0.05, 0.0]


def test_game_writes_outputs(tmp_path):
    rep = run_game(N=5, K=5)
    rep.write(tmp_path, "game")
    summary = json.loads((tmp_path / "game.json").read_text())
    assert summary["steps"] == 5
    assert len((tmp_path / "game_trajectories.csv").read_text().splitlines()) == 7


def test_small_bench(tmp_path):
    rows = [bench_cell(512, n, runs=5) for n in (2, 4)]
    assert rows[1]["ciphertext_bytes"] > rows[0]["ciphertext_bytes"]
    write_csv(rows, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().startswith("sigma,neighbors")
    with pytest.raises(ValueError):
        run_bench(runs=3)
    assert trend_ratios(rows) == {}


def test_scenario_is_deterministic():
    cfg = load_config(CONFIGS / "collusion.json")
    a = run_scenario(cfg)
    b = run_scenario(load_config(CONFIGS / "collusion.json"))
    strip = [{k: v for k, v in r.items() if k != "step_seconds"} for r in a]
    assert strip == [{k: v for k, v in r.items() if k != "step_seconds"} for r in b]


def test_deviation_bound_is_tight_for_linear_errors():
    rng = np.random.default_rng(3)
    n, K = 4, 12
    Js = [rng.uniform(-0.6, 0.6, (n, n)) for _ in range(K)]
    ws = [rng.uniform(0, 1e-3, n) for _ in range(K)]
    tracker = DeviationBound(n)
    bounds = [tracker.step(J, w) for J, w in zip(Js, ws)]
    # worst case for row 0 at the end: each f_s takes the sign of row 0 of its transfer matrix
    phi = [np.eye(n)]
    for J in reversed(Js[1:]):
        phi.insert(0, phi[0] @ J)
    worst = max(sum(np.abs(P[i]) @ w for P, w in zip(phi, ws)) for i in range(n))
    assert bounds[-1] == pytest.approx(worst, rel=1e-12)
    for _ in range(200):
        e = np.zeros(n)
        for J, w in zip(Js, ws):
            e = J @ e + rng.uniform(-1, 1, n) * w
        assert np.abs(e).max() <= bounds[-1]


def test_step_jacobian_matches_finite_differences():
    topo = game_topology(6)
    players = draw_players(topo, 0.0, 2.0, random.Random("jac"))
    specs = {i: coupling_spec(i, topo.neighbors(i), players[i]) for i in topo.nodes}
    terms = {i: derivative_terms(specs[i]) for i in topo.nodes}
    members = {i: specs[i].members for i in topo.nodes}
    diag = {i: 2 * float(players[i].a) for i in topo.nodes}
    x = {a: 0.3 + 0.2 * a for a in topo.nodes}

    def F(z):
        return np.array([z[i] - 0.01 * (diag[i] * z[i] + evaluate_plain(specs[i], z)) for i in topo.nodes])

    J = step_jacobian(terms, members, diag, 0.01, x, topo.nodes)
    eps = 1e-6
    for c, a in enumerate(topo.nodes):
        hi, lo = dict(x), dict(x)
        hi[a] += eps
        lo[a] -= eps
        np.testing.assert_allclose(J[:, c], (F(hi) - F(lo)) / (2 * eps), atol=1e-8)
