"""Deterministic lock-step message passing between agents.

Time advances in protocol rounds (``advance``), not wall clock.  Every
delivery is logged to the recipient's transcript, the sender's send log,
the relay's transcript (metadata only) and the global eavesdropper's
transcript.  Sealed payloads are visible only to their final recipient;
in ``aead`` mode the outsiders' transcripts hold the AES-GCM ciphertext
instead of nothing.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Iterable

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import ConfigError, DeliveryToDropped, TopologyViolation

log = logging.getLogger(__name__)

EAVESDROPPER = "eve"


@dataclass(frozen=True)
class Topology:
    nodes: tuple
    edges: frozenset  # of frozenset({a, b})

    def neighbors(self, i: int) -> tuple:
        return tuple(sorted(j for e in self.edges if i in e for j in e if j != i))

    def closed(self, i: int) -> tuple:
        return tuple(sorted((i, *self.neighbors(i))))

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def adjacent(self, a: int, b: int) -> bool:
        return frozenset((a, b)) in self.edges

    def edge_list(self) -> list:
        return sorted(tuple(sorted(e)) for e in self.edges)


def build_topology(config) -> Topology:
    """Validate ``{"nodes": [...], "edges": [[a, b], ...]}`` (nodes optional)."""
    if isinstance(config, dict):
        edges_in = config.get("edges", [])
        nodes_in = config.get("nodes")
    else:
        edges_in, nodes_in = config, None
    seen = set()
    for pair in edges_in:
        if len(pair) != 2:
            raise ConfigError(f"edge {pair!r} must have two endpoints")
        a, b = (int(v) for v in pair)
        if a == b:
            raise ConfigError(f"self-loop on node {a}")
        e = frozenset((a, b))
        if e in seen:
            raise ConfigError(f"duplicate edge {sorted(e)}")
        seen.add(e)
    endpoints = {v for e in seen for v in e}
    if nodes_in is None:
        nodes = tuple(sorted(endpoints))
    else:
        nodes = tuple(sorted(int(v) for v in nodes_in))
        if len(set(nodes)) != len(nodes):
            raise ConfigError("duplicate node ids")
        unknown = endpoints - set(nodes)
        if unknown:
            raise ConfigError(f"edges reference unknown nodes {sorted(unknown)}")
    return Topology(nodes, frozenset(seen))


def ring(n: int) -> Topology:
    return build_topology({"nodes": range(1, n + 1), "edges": [(i, i % n + 1) for i in range(1, n + 1)]})


def circulant(n: int, offsets: Iterable[int]) -> Topology:
    edges = set()
    for i in range(n):
        for off in offsets:
            j = (i + off) % n
            if j != i:
                edges.add(frozenset((i + 1, j + 1)))
    return build_topology({"nodes": range(1, n + 1), "edges": [tuple(e) for e in edges]})


def star(center: int, leaves: Iterable[int]) -> Topology:
    leaves = list(leaves)
    return build_topology({"nodes": [center, *leaves], "edges": [(center, j) for j in leaves]})


def payload_bytes(payload: Any) -> bytes:
    if payload is None:
        return b""
    if isinstance(payload, (bytes, bytearray)):
        return bytes(payload)
    return payload.to_bytes()


@dataclass
class Envelope:
    sender: Any
    recipient: Any
    kind: str
    payload: Any = None
    relay: Any = None
    sealed: bool = False
    tick: int = -1
    nbytes: int = 0


@dataclass(frozen=True)
class TranscriptEntry:
    tick: int
    sender: Any
    recipient: Any
    relay: Any
    kind: str
    nbytes: int
    sealed: bool
    payload: Any = None  # None when the observer cannot read it
    role: str = "recipient"  # recipient | relay | eavesdropper

    def record(self) -> dict:
        return {"tick": self.tick, "from": self.sender, "to": self.recipient, "relay": self.relay,
                "kind": self.kind, "bytes": self.nbytes, "sealed": self.sealed}


@dataclass(frozen=True)
class DropoutEvent:
    agent: int
    k: int


class Network:
    def __init__(self, topology: Topology, *, seal_mode: str = "model", seed: int = 0):
        if seal_mode not in {"model", "aead"}:
            raise ConfigError(f"unknown seal mode {seal_mode!r}")
        self.topology = topology
        self.seal_mode = seal_mode
        self._seed = seed
        self.tick = 0
        self.dropped: dict[int, int] = {}
        self.inboxes: dict[Any, deque] = defaultdict(deque)
        self.transcripts: dict[Any, list[TranscriptEntry]] = defaultdict(list)
        self.sent: dict[Any, list[TranscriptEntry]] = defaultdict(list)
        self.dead_letters: list[Envelope] = []
        self.messages = Counter()
        self.bytes = Counter()
        self._nonce = 0
        self._dropout_listeners = []

    # -- bookkeeping -----------------------------------------------------

    def advance(self) -> int:
        self.tick += 1
        return self.tick

    def alive(self, agent) -> bool:
        return agent not in self.dropped

    def reset_counters(self) -> None:
        self.messages.clear()
        self.bytes.clear()

    def _pair_key(self, a, b) -> bytes:
        lo, hi = sorted((str(a), str(b)))
        return hashlib.sha256(f"seal:{self._seed}:{lo}:{hi}".encode()).digest()[:16]

    def _seal(self, env: Envelope, raw: bytes) -> bytes:
        self._nonce += 1
        nonce = self._nonce.to_bytes(12, "big")
        header = f"{env.sender}>{env.recipient}:{env.kind}".encode()
        return nonce + AESGCM(self._pair_key(env.sender, env.recipient)).encrypt(nonce, raw, header)

    # -- delivery --------------------------------------------------------

    def deliver(self, env: Envelope) -> None:
        for who in (env.sender, env.relay, env.recipient):
            if who is not None and not self.alive(who):
                raise DeliveryToDropped(f"agent {who} has dropped out")
        hops = [(env.sender, env.recipient)] if env.relay is None else [(env.sender, env.relay), (env.relay, env.recipient)]
        for a, b in hops:
            if not self.topology.adjacent(a, b):
                raise TopologyViolation(f"no edge between {a} and {b}")
        raw = payload_bytes(env.payload)
        env.tick = self.tick
        env.nbytes = len(raw)
        outsider_view = None
        if env.sealed and self.seal_mode == "aead":
            outsider_view = self._seal(env, raw)
        elif not env.sealed:
            outsider_view = env.payload

        def entry(payload, role):
            return TranscriptEntry(env.tick, env.sender, env.recipient, env.relay, env.kind,
                                   env.nbytes, env.sealed, payload, role)

        self.inboxes[env.recipient].append(env)
        self.transcripts[env.recipient].append(entry(env.payload, "recipient"))
        if env.relay is not None:
            self.transcripts[env.relay].append(entry(outsider_view if not env.sealed else None, "relay"))
        self.transcripts[EAVESDROPPER].append(entry(outsider_view, "eavesdropper"))
        self.sent[env.sender].append(entry(env.payload, "sender"))
        self.messages[env.kind] += 1
        self.bytes[env.kind] += env.nbytes

    def send(self, sender, recipient, kind: str, payload=None, *, relay=None, sealed: bool = False) -> Envelope:
        env = Envelope(sender, recipient, kind, payload, relay=relay, sealed=sealed)
        self.deliver(env)
        return env

    def receive(self, agent, kind: str | None = None) -> list[Envelope]:
        """Drain ``agent``'s inbox (only envelopes of ``kind`` when given), FIFO."""
        box = self.inboxes[agent]
        if kind is None:
            out = list(box)
            box.clear()
            return out
        out = [e for e in box if e.kind == kind]
        rest = [e for e in box if e.kind != kind]
        box.clear()
        box.extend(rest)
        return out

    # -- dropout ---------------------------------------------------------

    def on_dropout(self, callback) -> None:
        self._dropout_listeners.append(callback)

    def inject_dropout(self, event: DropoutEvent) -> None:
        if event.agent not in self.topology.nodes:
            raise ConfigError(f"unknown agent {event.agent}")
        if event.agent in self.dropped:
            log.warning("agent %s already dropped at k=%s", event.agent, self.dropped[event.agent])
            return
        self.dropped[event.agent] = event.k
        pending = self.inboxes.pop(event.agent, deque())
        self.dead_letters.extend(pending)
        for callback in list(self._dropout_listeners):
            callback(event)

    # -- export ----------------------------------------------------------

    def transcript_records(self, principal) -> list[dict]:
        return [e.record() for e in self.transcripts.get(principal, [])]

    def dump_transcript(self, principal, path) -> None:
        with open(path, "w") as fh:
            for rec in self.transcript_records(principal):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
