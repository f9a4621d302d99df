"""Command line entry point: ``privpoly <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 protocol abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from ..errors import ConfigError, ProtocolAbort
from ..paillier import keygen
from .scenario import load_config, run_scenario

EXIT_CONFIG = 2
EXIT_ABORT = 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="scenario JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--share-mode", choices=("direct", "prf"))
    p.add_argument("--sigma", type=int, help="Paillier modulus bits")
    p.add_argument("--omega-bits", type=int)
    p.add_argument("--frac-bits", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privpoly", description="Private polynomial evaluation over agent networks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("keygen", "generate a Paillier key pair"),
                        ("run", "run the queries of a scenario"),
                        ("game", "private projected-gradient game"),
                        ("consensus", "private consensus controller"),
                        ("bench", "timing sweep over key length and neighbors"),
                        ("analyze", "identifiability verdicts for a corrupt set")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "game":
            p.add_argument("--players", type=int)
            p.add_argument("--steps", type=int)
            p.add_argument("--tau", type=float)
        if name == "consensus":
            p.add_argument("--steps", type=int)
            p.add_argument("--h", type=float)
            p.add_argument("--objective", choices=("mean", "weighted_mean"))
        if name == "bench":
            p.add_argument("--sigmas", type=int, nargs="+")
            p.add_argument("--sizes", type=int, nargs="+")
            p.add_argument("--runs", type=int)
        if name == "analyze":
            p.add_argument("--corrupt", type=int, nargs="+")
    return ap


def _config(args):
    overrides = {"seed": args.seed, "share_mode": args.share_mode, "sigma": args.sigma,
                 "omega_bits": args.omega_bits, "frac_bits": args.frac_bits}
    if args.command == "analyze" and args.corrupt:
        overrides["corrupt"] = args.corrupt
    return load_config(args.config if args.config else {}, **overrides)


def _pick(*values):
    return next(v for v in values if v is not None)


def cmd_keygen(args, cfg) -> dict:
    pk, sk = keygen(cfg.sigma, random.Random(f"{cfg.seed}/keygen"))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "public_key.json").write_text(json.dumps({"n": str(pk.n), "key_id": pk.key_id}))
    (args.out / "secret_key.json").write_text(json.dumps({"phi": str(sk.phi), "key_id": sk.key_id}))
    return {"bits": pk.bits, "key_id": pk.key_id}


def cmd_run(args, cfg) -> dict:
    records = run_scenario(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "queries.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return {"queries": len(records), "results": [{"owner": r["owner"], "k": r["k"], "result": r["result"]}
                                                 for r in records]}


def cmd_game(args, cfg) -> dict:
    from .game import run_game
    g = cfg.game
    report = run_game(N=_pick(args.players, g.get("N"), 30), K=_pick(args.steps, g.get("K"), 500),
                      tau=_pick(args.tau, g.get("tau"), 0.01), low=g.get("low", 0.0), high=g.get("high", 2.0),
                      lam=g.get("lambda", 0.0), seed=cfg.seed, sigma=cfg.sigma, omega_bits=cfg.omega_bits,
                      frac_bits=cfg.frac_bits, share_mode=cfg.share_mode)
    report.write(args.out, "game")
    return {k: v for k, v in report.summary().items() if k != "decay"}


def cmd_consensus(args, cfg) -> dict:
    from .consensus import run_consensus
    c = cfg.consensus
    topo = cfg.topology if cfg.topology.nodes else None
    report = run_consensus(topology=topo, x0=c.get("x0"), K=_pick(args.steps, c.get("K"), 100),
                           h=_pick(args.h, c.get("h"), 0.1), J=_pick(args.objective, c.get("J"), "mean"),
                           weights={int(k): v for k, v in c.get("weights", {}).items()} or None,
                           seed=cfg.seed, sigma=cfg.sigma, omega_bits=cfg.omega_bits, frac_bits=cfg.frac_bits,
                           share_mode=cfg.share_mode)
    report.write(args.out, "consensus")
    return report.summary()


def cmd_bench(args, cfg) -> dict:
    from .bench import run_bench, trend_ratios, write_csv
    b = cfg.bench
    rows = run_bench(sigmas=tuple(_pick(args.sigmas, b.get("sigmas"), (512, 1024, 2048))),
                     sizes=tuple(_pick(args.sizes, b.get("sizes"), (3, 9, 27))),
                     runs=_pick(args.runs, b.get("runs"), 5), seed=cfg.seed, omega_bits=cfg.omega_bits,
                     share_mode=cfg.share_mode)
    write_csv(rows, args.out / "bench.csv")
    return trend_ratios(rows)


def cmd_analyze(args, cfg) -> dict:
    from ..privacy import build_system, verdict_table
    if not cfg.corrupt:
        raise ConfigError("analyze needs a corrupt set (--corrupt or config 'corrupt')")
    queries = {o: cfg.spec(o) for o in cfg.queries if o in cfg.corrupt}
    if not queries:
        raise ConfigError("no corrupt agent owns a query")
    missing = [a for a in cfg.topology.nodes if a not in cfg.values]
    if missing:
        raise ConfigError(f"analysis needs every value; missing {missing}")
    inst = build_system(queries, {a: cfg.values[a] for a in cfg.corrupt}, true_values=cfg.values,
                        topology=cfg.topology)
    table = verdict_table(inst)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "verdicts.json").write_text(json.dumps(table, indent=2))
    with open(args.out / "verdicts.csv", "w") as fh:
        fh.write("agent,verdict\n")
        for row in table:
            fh.write(f"{row['agent']},{row['verdict']}\n")
    return {"degree": inst.r, "verdicts": table}


COMMANDS = {"keygen": cmd_keygen, "run": cmd_run, "game": cmd_game, "consensus": cmd_consensus,
            "bench": cmd_bench, "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        result = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolAbort as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
