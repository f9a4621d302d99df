"""Scenario configuration: parsing, validation and the generic query runner."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..codec import DEFAULT_FRAC_BITS, DEFAULT_OMEGA_BITS, FieldParams
from ..errors import ConfigError
from ..netsim import DropoutEvent, Network, Topology, build_topology
from ..poly import Monomial, PolynomialSpec, decompose
from ..protocol import QuerySession, make_agents

SHARE_MODES = ("direct", "prf")


@dataclass
class ScenarioConfig:
    topology: Topology
    queries: dict = field(default_factory=dict)  # owner -> list[Monomial]
    values: dict = field(default_factory=dict)
    sigma: int = 512
    omega_bits: int = DEFAULT_OMEGA_BITS
    frac_bits: int = DEFAULT_FRAC_BITS
    share_mode: str = "direct"
    horizon: int = 1
    dropouts: list = field(default_factory=list)
    seed: int = 0
    corrupt: tuple = ()
    game: dict = field(default_factory=dict)
    consensus: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    def validate(self) -> "ScenarioConfig":
        if self.share_mode not in SHARE_MODES:
            raise ConfigError(f"share mode must be one of {SHARE_MODES}")
        if self.frac_bits < 1:
            raise ConfigError("frac_bits must be positive")
        need = 2 * self.omega_bits + 64
        if self.sigma < need:
            raise ConfigError(f"sigma={self.sigma} too small for a {self.omega_bits}-bit field (need {need})")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        nodes = set(self.topology.nodes)
        for owner, monos in self.queries.items():
            if owner not in nodes:
                raise ConfigError(f"query owner {owner} is not a node")
            for m in monos:
                for a, _ in m.powers:
                    if a not in nodes:
                        raise ConfigError(f"query of {owner} references unknown agent {a}")
        for a in self.values:
            if a not in nodes:
                raise ConfigError(f"value given for unknown agent {a}")
        for ev in self.dropouts:
            if ev.agent not in nodes:
                raise ConfigError(f"dropout of unknown agent {ev.agent}")
            if ev.agent in self.queries:
                raise ConfigError(f"query owner {ev.agent} cannot drop out")
            if not 0 <= ev.k < self.horizon:
                raise ConfigError(f"dropout time {ev.k} outside the horizon")
        for a in self.corrupt:
            if a not in nodes:
                raise ConfigError(f"corrupt agent {a} is not a node")
        return self

    def field_params(self) -> FieldParams:
        return FieldParams.generate(self.omega_bits, random.Random(f"{self.seed}/omega"), self.frac_bits)

    def spec(self, owner: int) -> PolynomialSpec:
        return decompose(self.queries[owner], owner, self.topology.neighbors(owner))


def _int_keys(d: dict) -> dict:
    return {int(k): v for k, v in d.items()}


def parse_monomials(items) -> list[Monomial]:
    out = []
    for item in items:
        if "coeff" not in item:
            raise ConfigError(f"monomial {item!r} lacks a coeff")
        out.append(Monomial.of(item["coeff"], _int_keys(item.get("exps", {}))))
    return out


def load_config(source: Any, **overrides) -> ScenarioConfig:
    """Build a config from a dict or a JSON file path; ``overrides`` skip ``None``."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    else:
        raw = dict(source or {})
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        topology = build_topology(raw.get("topology", {"nodes": [], "edges": []}))
        cfg = ScenarioConfig(
            topology=topology,
            queries={int(o): parse_monomials(m) for o, m in raw.get("queries", {}).items()},
            values={int(a): v for a, v in raw.get("values", {}).items()},
            sigma=int(raw.get("sigma", 512)),
            omega_bits=int(raw.get("omega_bits", DEFAULT_OMEGA_BITS)),
            frac_bits=int(raw.get("frac_bits", DEFAULT_FRAC_BITS)),
            share_mode=raw.get("share_mode", "direct"),
            horizon=int(raw.get("horizon", 1)),
            dropouts=[DropoutEvent(int(d["agent"]), int(d["k"])) for d in raw.get("dropouts", [])],
            seed=int(raw.get("seed", 0)),
            corrupt=tuple(int(a) for a in raw.get("corrupt", [])),
            game=dict(raw.get("game", {})),
            consensus=dict(raw.get("consensus", {})),
            bench=dict(raw.get("bench", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return cfg.validate()


def run_scenario(cfg: ScenarioConfig) -> list[dict]:
    """Run every configured query for ``k = 0..horizon-1``; one record per query."""
    params = cfg.field_params()
    net = Network(cfg.topology, seed=cfg.seed)
    agents = make_agents(cfg.topology.nodes, cfg.seed)
    missing = [a for a in cfg.topology.nodes if a not in cfg.values and any(
        a in cfg.spec(o).members for o in cfg.queries)]
    if missing:
        raise ConfigError(f"no private value for agents {missing}")
    sessions = {o: QuerySession(cfg.spec(o), net, agents, params, key_bits=cfg.sigma,
                                share_mode=cfg.share_mode, seed=cfg.seed) for o in sorted(cfg.queries)}
    for a, v in cfg.values.items():
        agents[a].set_value(v)
    records = []
    for k in range(cfg.horizon):
        for ev in cfg.dropouts:
            if ev.k == k:
                net.inject_dropout(ev)
        for o, s in sessions.items():
            rec = s.run(k).record()
            rec["events"] = list(s.events)
            records.append(rec)
    return records
