"""Private evaluation of a neighborhood polynomial (Steps S1 to S7).

The owner ``i`` holds the Paillier secret key and the polynomial
coefficients; every neighbor ``j`` holds only its private value ``x_j``
and its mask shares.  One query runs as a lock-step schedule on a
:class:`~privpoly.netsim.Network`:

S1  owner publishes ``pk`` (once per session)
S2  owner sends encrypted bivariate coefficients (times its own features)
    and encrypted factor coefficients to every ordinary neighbor
S3  ordinary neighbors return ``sigma_j`` and ``[[mu_j^t]]``
S4  owner decrypts the ``mu``, forms ``Psi_i^t`` and forwards it, folded
    into the distinguished neighbor's factor coefficients, to ``D_i``
S5  ``D_i`` returns ``sigma_D * prod_t Psi_D^t``
S6/S7 owner decrypts and adds everything with its own additive share

All values live in Z_omega at one common scale exponent ``S`` chosen
from public structure, so the final residue decodes directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from . import paillier
from .codec import EncodedValue, FieldParams, check_range, decode, encode, lift
from .errors import (ConfigError, EncodingOverflow, InsufficientNeighbors, MissingContribution,
                     NewDistinguishedRequired, ParameterError, ProtocolAbort, RoleConflict, ScaleError)
from .modmath import RandomSource
from .netsim import DropoutEvent, Network, build_topology
from .paillier import Ciphertext, PublicKey, SecretKey
from .poly import Factor, PolynomialSpec, drop_agent, transform
from .shares import (KEY_BYTES, PrfKeyBundle, ShareContribution, ShareSet, aggregate_shares,
                     draw_prf_keys, gen_contributions_direct, merge_on_dropout)

log = logging.getLogger(__name__)

SAFETY_BITS = 64
CIPHERTEXT_KINDS = ("enc-coeffs", "sigma-mu", "psi-forward", "sigma-psi")
SHARE_KINDS = ("share", "prf-key")


def required_key_bits(params: FieldParams) -> int:
    """Smallest modulus size that keeps every plaintext sum below ``n``.

    Ciphertext exponentiation multiplies two field residues, so single
    plaintext terms reach ``omega**2``; the margin covers the sums.
    """
    return 2 * params.omega.bit_length() + SAFETY_BITS


def check_key_size(pk: PublicKey, params: FieldParams) -> None:
    need = required_key_bits(params)
    if pk.bits < need:
        raise ParameterError(f"a {params.omega.bit_length()}-bit field needs a key of at least {need} bits")


# -- scale plan -----------------------------------------------------------

def feature_scale(fmap, index: int) -> int:
    if fmap and index in fmap:
        return 1
    return index


def feature_residue(fmap, index: int, x, params: FieldParams) -> int:
    """Encoded feature ``index`` of ``x`` at :func:`feature_scale`."""
    if fmap and index in fmap:
        return encode(transform(fmap[index])(float(x)), params, 1).residue
    if index == 0:
        return 1
    return pow(encode(x, params, 1).residue, index, params.omega)


def _feature_int(fmap, index: int, x, params: FieldParams) -> int:
    # signed-integer twin of feature_residue, used by the overflow oracle
    if fmap and index in fmap:
        return lift(encode(transform(fmap[index])(float(x)), params, 1).residue, params)
    return lift(encode(x, params, 1).residue, params) ** index


def factor_scale(fmap, factor: Factor) -> int:
    top = max(feature_scale(fmap, q) for _, q in factor.poly.terms)
    return top if factor.poly.is_unit else top + 1


def common_scale(spec: PolynomialSpec) -> int:
    """Largest natural scale over all terms (at least one)."""
    i = spec.owner
    fi = spec.feature_map(i)
    S = 1
    for part in spec.bivariate:
        fj = spec.feature_map(part.neighbor)
        for _, pi, pj in part.terms:
            S = max(S, feature_scale(fi, pi) + feature_scale(fj, pj) + 1)
    for term in spec.multiplicative:
        S = max(S, sum(factor_scale(spec.feature_map(a), f) for a, f in term.factors))
    return S


def owner_factor_scale(spec: PolynomialSpec, term, S: int) -> int:
    """Scale of the owner's factor: pads the product up to ``S``."""
    others = sum(factor_scale(spec.feature_map(a), f) for a, f in term.factors if a != spec.owner)
    return S - others


def _coeff(c, params: FieldParams, scale: int) -> int:
    return encode(Fraction(c), params, scale).residue


def _factor_value(fmap, factor: Factor, x, params: FieldParams, scale: int) -> int:
    total = 0
    for c, q in factor.poly.terms:
        total += _coeff(c, params, scale - feature_scale(fmap, q)) * feature_residue(fmap, q, x, params)
    return total % params.omega


def evaluate_encoded(spec: PolynomialSpec, values: Mapping[int, object], params: FieldParams) -> EncodedValue:
    """Encoded-arithmetic oracle: the exact residue the protocol must return.

    Runs the same fixed-point plan as the protocol, without masks or
    encryption, over signed integers; raises EncodingOverflow when the
    result leaves the symmetric range of the field.
    """
    i = spec.owner
    S = common_scale(spec)
    fi = spec.feature_map(i)
    total = 0
    for part in spec.bivariate:
        j = part.neighbor
        fj = spec.feature_map(j)
        for c, pi, pj in part.terms:
            scale = S - feature_scale(fi, pi) - feature_scale(fj, pj)
            total += (lift(_coeff(c, params, scale), params) * _feature_int(fi, pi, values[i], params)
                      * _feature_int(fj, pj, values[j], params))
    for term in spec.multiplicative:
        prod = 1
        for a, f in term.factors:
            fa = spec.feature_map(a)
            scale = owner_factor_scale(spec, term, S) if a == i else factor_scale(fa, f)
            prod *= sum(lift(_coeff(c, params, scale - feature_scale(fa, q)), params)
                        * _feature_int(fa, q, values[a], params) for c, q in f.poly.terms)
        total += prod
    check_range(total, params)
    return EncodedValue(total % params.omega, S)


# -- messages -------------------------------------------------------------

def _cts_bytes(cts, width: int) -> bytes:
    return struct.pack(">I", len(cts)) + b"".join(c.value.to_bytes(width, "big") for c in cts)


@dataclass(frozen=True)
class PublishKey:
    owner: int
    pk: PublicKey
    kind = "publish-key"

    def to_bytes(self) -> bytes:
        return paillier.serialize_public_key(self.pk)

    def values(self):
        return ()


@dataclass(frozen=True)
class EncCoeffs:
    owner: int
    k: int
    scale: int
    width: int
    bivariate: tuple  # Ciphertext per term of the recipient's part
    factors: tuple  # per t: tuple of Ciphertext (empty for public factors)
    kind = "enc-coeffs"

    def to_bytes(self) -> bytes:
        return struct.pack(">II", self.k, self.scale) + _cts_bytes(self.bivariate, self.width) + b"".join(
            _cts_bytes(f, self.width) for f in self.factors)

    def values(self):
        return (*self.bivariate, *(c for f in self.factors for c in f))


@dataclass(frozen=True)
class SigmaMu:
    sender: int
    k: int
    width: int
    sigma: Ciphertext
    mus: tuple  # per t
    kind = "sigma-mu"

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.k) + _cts_bytes((self.sigma, *self.mus), self.width)

    def values(self):
        return (self.sigma, *self.mus)


@dataclass(frozen=True)
class PsiForward:
    owner: int
    k: int
    width: int
    psis: tuple  # per t: tuple of Ciphertext
    kind = "psi-forward"

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.k) + b"".join(_cts_bytes(p, self.width) for p in self.psis)

    def values(self):
        return tuple(c for p in self.psis for c in p)


@dataclass(frozen=True)
class SigmaPsi:
    sender: int
    k: int
    width: int
    value: Ciphertext
    kind = "sigma-psi"

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.k) + _cts_bytes((self.value,), self.width)

    def values(self):
        return (self.value,)


@dataclass(frozen=True)
class SealedShare:
    owner: int
    contribution: ShareContribution
    kind = "share"

    def to_bytes(self) -> bytes:
        c = self.contribution
        return (struct.pack(">III", c.sender, c.recipient, c.k) + paillier.pack_int(c.additive)
                + b"".join(paillier.pack_int(m) for m in c.multiplicative))

    def values(self):
        return (self.contribution,)


@dataclass(frozen=True)
class KeyTransfer:
    owner: int
    sender: int
    alpha: bytes
    kappa: bytes
    seed: int
    kind = "prf-key"

    def to_bytes(self) -> bytes:
        return struct.pack(">II", self.owner, self.sender) + self.alpha + self.kappa + paillier.pack_int(self.seed)

    def values(self):
        return (self.alpha, self.kappa)


@dataclass(frozen=True)
class DropoutNotice:
    owner: int
    agent: int
    k: int
    kind = "dropout-notice"

    def to_bytes(self) -> bytes:
        return struct.pack(">III", self.owner, self.agent, self.k)

    def values(self):
        return ()


# -- public views ---------------------------------------------------------

@dataclass(frozen=True)
class FactorView:
    exponents: tuple
    public: tuple | None  # encoded coefficients when the factor is public
    scale: int


@dataclass(frozen=True)
class NeighborView:
    """What neighbor ``agent`` may know about the owner's query: structure only."""

    owner: int
    agent: int
    distinguished: bool
    scale: int
    bivariate: tuple  # p_j per term
    factors: tuple  # FactorView per t
    features: tuple | None


def neighbor_view(spec: PolynomialSpec, j: int, distinguished, params: FieldParams) -> NeighborView:
    fj = spec.feature_map(j)
    views = []
    for term in spec.multiplicative:
        f = term.factor(j)
        scale = factor_scale(fj, f)
        qs = tuple(q for _, q in f.poly.terms)
        public = None
        if not f.sensitive:
            public = tuple(_coeff(c, params, scale - feature_scale(fj, q)) for c, q in f.poly.terms)
        views.append(FactorView(qs, public, scale))
    return NeighborView(
        spec.owner, j, j == distinguished and spec.T > 0, common_scale(spec),
        tuple(pj for _, _, pj in spec.part(j).terms), tuple(views),
        tuple(sorted(fj.items())) if fj else None,
    )


def select_distinguished(neighbors, policy: str = "min-id", seed: int = 0):
    """Pick ``D_i`` from the neighbors alone; the owner's data is never consulted."""
    neighbors = sorted(set(neighbors))
    if not neighbors:
        raise InsufficientNeighbors("no neighbor can act as distinguished neighbor")
    if policy == "min-id":
        return neighbors[0]
    if policy == "seeded-hash":
        return min(neighbors, key=lambda j: hashlib.sha256(f"{seed}:{j}".encode()).digest())
    raise ConfigError(f"unknown selection policy {policy!r}")


# -- step kernels ---------------------------------------------------------

def _factor_exponent(fv: FactorView, fmap, x, m: int, params: FieldParams) -> list[int]:
    """Exponents ``m * feature(q)`` a neighbor raises the coefficient ciphertexts to."""
    return [m * feature_residue(fmap, q, x, params) % params.omega for q in fv.exponents]


def _public_factor(fv: FactorView, fmap, x, params: FieldParams) -> int:
    return sum(c * feature_residue(fmap, q, x, params) for c, q in zip(fv.public, fv.exponents)) % params.omega


def step3_neighbor(view: NeighborView, msg: EncCoeffs, x_j, share: ShareSet, pk: PublicKey,
                   params: FieldParams, rng: RandomSource) -> SigmaMu:
    if msg.scale != view.scale:
        raise ScaleError(f"coefficients at scale {msg.scale}, plan says {view.scale}")
    if len(msg.bivariate) != len(view.bivariate):
        raise ProtocolAbort("bivariate coefficient count does not match the public structure")
    fmap = dict(view.features) if view.features else None
    exps = [feature_residue(fmap, pj, x_j, params) for pj in view.bivariate]
    sigma = paillier.linear_combination(
        pk, [*msg.bivariate, paillier.encrypt(pk, share.additive, rng)], [*exps, 1])
    mus = []
    for t, fv in enumerate(view.factors):
        m = _mul_share(share, t)
        if fv.public is not None:
            # coefficients are public: compute mu in the clear, send it encrypted
            mu = m * _public_factor(fv, fmap, x_j, params) % params.omega
            mus.append(paillier.encrypt(pk, mu, rng))
        else:
            mus.append(paillier.linear_combination(pk, msg.factors[t], _factor_exponent(fv, fmap, x_j, m, params)))
    return SigmaMu(view.agent, msg.k, msg.width, sigma, tuple(mus))


def step4_owner(d_coeffs, mus, own_mus, pk: PublicKey, params: FieldParams, rng: RandomSource,
                k: int, owner: int) -> PsiForward:
    """Fold ``Psi_i^t = mu_i^t * prod_j mu_j^t`` into the forward to ``D_i``.

    ``mus`` maps each ordinary neighbor to its decrypted ``mu_j^t`` list;
    ``d_coeffs[t]`` are the encoded coefficients of ``D_i``'s factor, or
    ``None`` when that factor is public.
    """
    psis = []
    for t, own in enumerate(own_mus):
        psi = own
        for values in mus.values():
            if len(values) <= t:
                raise MissingContribution(f"mu^{t + 1} missing")
            psi = psi * values[t] % params.omega
        if d_coeffs[t] is None:
            psis.append((paillier.encrypt(pk, psi, rng),))
        else:
            psis.append(tuple(paillier.encrypt(pk, c * psi % params.omega, rng) for c in d_coeffs[t]))
    return PsiForward(owner, k, pk.ciphertext_bytes, tuple(psis))


def step5_distinguished(view: NeighborView, fwd: PsiForward, msg: EncCoeffs, x_d, share: ShareSet,
                        pk: PublicKey, params: FieldParams, rng: RandomSource) -> SigmaPsi:
    if msg.scale != view.scale:
        raise ScaleError(f"coefficients at scale {msg.scale}, plan says {view.scale}")
    fmap = dict(view.features) if view.features else None
    bases = [*msg.bivariate, paillier.encrypt(pk, share.additive, rng)]
    exps = [*(feature_residue(fmap, pj, x_d, params) for pj in view.bivariate), 1]
    if len(fwd.psis) != len(view.factors):
        raise MissingContribution("forward does not cover every product term")
    for t, fv in enumerate(view.factors):
        m = _mul_share(share, t)
        if fv.public is not None:
            (ct,) = fwd.psis[t]
            bases.append(ct)
            exps.append(m * _public_factor(fv, fmap, x_d, params) % params.omega)
        else:
            bases.extend(fwd.psis[t])
            exps.extend(_factor_exponent(fv, fmap, x_d, m, params))
    return SigmaPsi(view.agent, msg.k, msg.width, paillier.linear_combination(pk, bases, exps))


def _mul_share(share: ShareSet, t: int) -> int:
    if len(share.multiplicative) <= t:
        raise MissingContribution(f"agent {share.owner} has {len(share.multiplicative)} multiplicative shares")
    return share.multiplicative[t]


# -- agents ---------------------------------------------------------------

class Agent:
    """One network participant. Holds only its own private value."""

    def __init__(self, agent_id: int, rng: RandomSource):
        self.id = agent_id
        self.rng = rng
        self._x = None
        self.public_keys: dict[int, PublicKey] = {}
        self.views: dict[int, NeighborView] = {}
        self.shares: dict[tuple, ShareSet] = {}
        self.prf: dict[int, PrfKeyBundle] = {}
        self.roles: dict[tuple, str] = {}

    @property
    def value(self):
        return self._x

    def set_value(self, x) -> None:
        self._x = x

    def _claim(self, owner: int, k: int, role: str) -> None:
        prev = self.roles.get((owner, k))
        if prev is not None and prev != role:
            raise RoleConflict(f"agent {self.id} already acted as {prev} for query ({owner}, k={k})")
        self.roles[(owner, k)] = role

    def share(self, owner: int, k: int) -> ShareSet:
        try:
            return self.shares[(owner, k)]
        except KeyError:
            raise MissingContribution(f"agent {self.id} has no shares for ({owner}, k={k})") from None

    def on_enc_coeffs(self, net: Network, env, params: FieldParams) -> None:
        msg: EncCoeffs = env.payload
        view = self.views[msg.owner]
        if view.distinguished:
            return  # kept for Step 5
        self._claim(msg.owner, msg.k, "ordinary")
        reply = step3_neighbor(view, msg, self._x, self.share(msg.owner, msg.k),
                               self.public_keys[msg.owner], params, self.rng)
        net.send(self.id, msg.owner, reply.kind, reply)

    def on_psi_forward(self, net: Network, fwd: PsiForward, coeffs: EncCoeffs, params: FieldParams) -> None:
        view = self.views[fwd.owner]
        if not view.distinguished:
            raise RoleConflict(f"agent {self.id} is not the distinguished neighbor of {fwd.owner}")
        self._claim(fwd.owner, fwd.k, "distinguished")
        reply = step5_distinguished(view, fwd, coeffs, self._x, self.share(fwd.owner, fwd.k),
                                    self.public_keys[fwd.owner], params, self.rng)
        net.send(self.id, fwd.owner, reply.kind, reply)


# -- results --------------------------------------------------------------

@dataclass
class QueryResult:
    owner: int
    k: int
    value: float
    encoded: EncodedValue
    distinguished: int | None
    messages: Counter = field(default_factory=Counter)
    bytes: Counter = field(default_factory=Counter)
    step_seconds: dict = field(default_factory=dict)
    network: Network | None = field(default=None, repr=False)

    @property
    def message_count(self) -> int:
        return sum(self.messages.values())

    @property
    def byte_count(self) -> int:
        return sum(self.bytes.values())

    @property
    def ciphertext_bytes(self) -> int:
        return sum(self.bytes[k] for k in CIPHERTEXT_KINDS)

    @property
    def share_bytes(self) -> int:
        return sum(self.bytes[k] for k in SHARE_KINDS)

    def record(self) -> dict:
        return {
            "owner": self.owner, "k": self.k, "result": self.value, "distinguished": self.distinguished,
            "messages": self.message_count, "bytes": self.byte_count,
            "ciphertext_bytes": self.ciphertext_bytes, "share_bytes": self.share_bytes,
            "step_seconds": self.step_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


# -- session --------------------------------------------------------------

class QuerySession:
    """Repeated private queries of one owner over its closed neighborhood.

    ``agents`` maps every node to its :class:`Agent`; several sessions can
    share one network and one agent table.
    """

    def __init__(self, spec: PolynomialSpec, network: Network, agents: Mapping[int, Agent],
                 params: FieldParams, *, keys: tuple[PublicKey, SecretKey] | None = None,
                 key_bits: int = 512, share_mode: str = "direct", seed: int = 0,
                 policy: str = "min-id", distinguished: int | None = None, verify: bool = True):
        if share_mode not in {"direct", "prf"}:
            raise ConfigError(f"unknown share mode {share_mode!r}")
        i = spec.owner
        topo = network.topology
        for j in spec.neighbors:
            if not topo.adjacent(i, j):
                raise ConfigError(f"agent {j} is not a neighbor of {i}")
        if len(spec.neighbors) < 2:
            raise InsufficientNeighbors(f"agent {i} has {len(spec.neighbors)} neighbors, needs at least 2")
        self.owner = i
        self.base_spec = spec
        self.spec = spec
        self.base_group = spec.members
        self.net = network
        self.agents = agents
        self.params = params
        self.share_mode = share_mode
        self.seed = seed
        self.policy = policy
        self.verify = verify
        self.dropped: dict[int, int] = {}
        self.events: list[dict] = []
        self.closed = False
        if keys is None:
            import random
            keys = paillier.keygen(key_bits, random.Random(f"{seed}/keygen/{i}"))
        self.pk, self.sk = keys
        check_key_size(self.pk, params)
        self.distinguished = distinguished if distinguished is not None else select_distinguished(spec.neighbors, policy, seed)
        if self.distinguished not in spec.neighbors:
            raise ConfigError(f"distinguished neighbor {self.distinguished} is not a neighbor of {i}")
        self._setup()
        network.on_dropout(self._on_dropout)

    # setup: S1 and (PRF mode) the one-shot key exchange
    def _setup(self) -> None:
        i = self.owner
        for j in self.spec.neighbors:
            self.net.send(i, j, "publish-key", PublishKey(i, self.pk))
        self.net.advance()
        for j in self.spec.neighbors:
            for env in self.net.receive(j, "publish-key"):
                self.agents[j].public_keys[i] = env.payload.pk
        self._publish_views()
        if self.share_mode == "prf":
            S = int.from_bytes(hashlib.sha256(f"{self.seed}/prf-seed/{i}".encode()).digest()[:8], "big")
            for j in self.base_group:
                self.agents[j].prf[i] = PrfKeyBundle(j, S)
            for j in self.base_group:
                keys = draw_prf_keys(j, self.base_group, self.agents[j].rng)
                for h, (alpha, kappa) in keys.items():
                    self.agents[j].prf[i].outgoing[h] = (alpha, kappa)
                    self._send_sealed(j, h, "prf-key", KeyTransfer(i, j, alpha, kappa, S))
            self.net.advance()
            for h in self.base_group:
                for env in self.net.receive(h, "prf-key"):
                    kt = env.payload
                    self.agents[h].prf[i].incoming[kt.sender] = (kt.alpha, kt.kappa)

    def _publish_views(self) -> None:
        for j in self.spec.neighbors:
            self.agents[j].views[self.owner] = neighbor_view(self.spec, j, self.distinguished, self.params)

    def _send_sealed(self, j, h, kind, payload) -> None:
        relay = None if self.owner in (j, h) else self.owner
        self.net.send(j, h, kind, payload, relay=relay, sealed=True)

    @property
    def group(self) -> tuple:
        return self.spec.members

    # shares for one time index
    def _provision_shares(self, k: int) -> None:
        T = self.spec.T
        omega = self.params.omega
        i = self.owner
        if self.share_mode == "prf":
            alive = set(self.group)
            for j in self.group:
                self.agents[j].shares[(i, k)] = self.agents[j].prf[i].shares(k, T, omega, alive)
            return
        own = {}
        for j in self.group:
            contribs = gen_contributions_direct(j, self.base_group, T, k, omega, self.agents[j].rng)
            for d in self.dropped:
                contribs = merge_on_dropout(contribs, d, omega, owner=i)
            own[j] = [c for c in contribs if c.recipient == j]
            for c in contribs:
                if c.recipient != j:
                    self._send_sealed(j, c.recipient, "share", SealedShare(i, c))
        self.net.advance()
        for j in self.group:
            received = own[j] + [e.payload.contribution for e in self.net.receive(j, "share")
                                 if e.payload.owner == i]
            self.agents[j].shares[(i, k)] = aggregate_shares(j, received, self.group, k, omega, T)

    def _enc_coeffs(self, j: int, k: int, S: int, rng: RandomSource) -> EncCoeffs:
        spec, params, pk = self.spec, self.params, self.pk
        i = self.owner
        fi, fj = spec.feature_map(i), spec.feature_map(j)
        xi = self.agents[i].value
        biv = []
        for c, pi, pj in spec.part(j).terms:
            scale = S - feature_scale(fi, pi) - feature_scale(fj, pj)
            m = _coeff(c, params, scale) * feature_residue(fi, pi, xi, params) % params.omega
            biv.append(paillier.encrypt(pk, m, rng))
        factors = []
        ordinary = j != self.distinguished or spec.T == 0
        for term in spec.multiplicative:
            f = term.factor(j)
            if ordinary and f.sensitive:
                scale = factor_scale(fj, f)
                factors.append(tuple(paillier.encrypt(pk, _coeff(c, params, scale - feature_scale(fj, q)), rng)
                                     for c, q in f.poly.terms))
            else:
                factors.append(())
        return EncCoeffs(i, k, S, pk.ciphertext_bytes, tuple(biv), tuple(factors))

    def run(self, k: int, values: Mapping[int, object] | None = None) -> QueryResult:
        """Evaluate the current query at time index ``k``.

        ``values`` (optional) sets each agent's private value first; it is a
        simulator convenience, and each agent still reads only its own.
        """
        if self.closed:
            raise ProtocolAbort(f"session of agent {self.owner} is closed")
        spec, params, pk, sk, net = self.spec, self.params, self.pk, self.sk, self.net
        i, omega = self.owner, params.omega
        if len(spec.neighbors) < 2:
            raise InsufficientNeighbors(f"agent {i} has fewer than two live neighbors")
        if values is not None:
            for a in spec.members:
                self.agents[a].set_value(values[a])
        net.reset_counters()
        owner = self.agents[i]
        T = spec.T
        D = self.distinguished if T > 0 else None
        S = common_scale(spec)
        times = {}

        t0 = time.perf_counter()
        self._provision_shares(k)
        times["shares"] = time.perf_counter() - t0
        own_share = owner.share(i, k)

        t0 = time.perf_counter()
        coeffs = {}
        for j in spec.neighbors:
            coeffs[j] = self._enc_coeffs(j, k, S, owner.rng)
            net.send(i, j, "enc-coeffs", coeffs[j])
        own_mus = []
        fi = spec.feature_map(i)
        for t, term in enumerate(spec.multiplicative):
            w = _factor_value(fi, term.factor(i), owner.value, params, owner_factor_scale(spec, term, S))
            own_mus.append(_mul_share(own_share, t) * w % omega)
        net.advance()
        times["S2"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        held = {}
        for j in spec.neighbors:
            for env in net.receive(j, "enc-coeffs"):
                if j == D:
                    held[j] = env.payload
                else:
                    self.agents[j].on_enc_coeffs(net, env, params)
        net.advance()
        times["S3"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        replies = {e.payload.sender: e.payload for e in net.receive(i, "sigma-mu")}
        expected = [j for j in spec.neighbors if j != D]
        missing = sorted(set(expected) - set(replies))
        if missing:
            raise MissingContribution(f"no Step-3 reply from {missing} at k={k}")
        total = own_share.additive
        mus = {}
        for j in expected:
            total += paillier.decrypt(sk, pk, replies[j].sigma)
            mus[j] = [paillier.decrypt(sk, pk, c) % omega for c in replies[j].mus]
        if D is not None:
            fD = spec.feature_map(D)
            d_coeffs = []
            for term in spec.multiplicative:
                f = term.factor(D)
                if f.sensitive:
                    scale = factor_scale(fD, f)
                    d_coeffs.append([_coeff(c, params, scale - feature_scale(fD, q)) for c, q in f.poly.terms])
                else:
                    d_coeffs.append(None)
            fwd = step4_owner(d_coeffs, mus, own_mus, pk, params, owner.rng, k, i)
            net.send(i, D, "psi-forward", fwd)
            net.advance()
        times["S4"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        if D is not None:
            (env,) = net.receive(D, "psi-forward")
            self.agents[D].on_psi_forward(net, env.payload, held[D], params)
            net.advance()
            final = net.receive(i, "sigma-psi")
            if len(final) != 1:
                raise MissingContribution(f"no Step-5 reply from {D} at k={k}")
            total += paillier.decrypt(sk, pk, final[0].payload.value)
        times["S5"] = time.perf_counter() - t0

        encoded = EncodedValue(total % omega, S)
        value = decode(encoded, params)
        if self.verify:
            self._check(encoded)
        messages, nbytes = Counter(net.messages), Counter(net.bytes)
        return QueryResult(i, k, value, encoded, D, messages, nbytes, times, net)

    def _check(self, encoded: EncodedValue) -> None:
        # simulator-side guard: the harness sees every value, agents do not
        values = {a: self.agents[a].value for a in self.spec.members}
        expect = evaluate_encoded(self.spec, values, self.params)
        if expect.residue != encoded.residue:
            raise ProtocolAbort("protocol result differs from the encoded-arithmetic oracle")

    # dropout
    def _on_dropout(self, event: DropoutEvent) -> None:
        if event.agent == self.owner:
            self.closed = True
            return
        if event.agent in self.spec.neighbors:
            self.drop(event.agent, event.k)

    def drop(self, j: int, k_tilde: int) -> None:
        try:
            handle_dropout(self, j, k_tilde)
        except NewDistinguishedRequired:
            survivors = [a for a in self.spec.neighbors if a != j]
            self.distinguished = select_distinguished(survivors, self.policy, self.seed)
            self.events.append({"event": "reselect-distinguished", "dropped": j, "k": k_tilde,
                                "distinguished": self.distinguished})
            log.info("agent %s: distinguished neighbor %s dropped, now %s", self.owner, j, self.distinguished)
            handle_dropout(self, j, k_tilde)


def handle_dropout(ctx: QuerySession, j: int, k_tilde: int) -> QuerySession:
    """Switch ``ctx`` to the reduced query from ``k_tilde`` on and notify neighbors."""
    if j == ctx.owner:
        raise ProtocolAbort("the query owner cannot drop out of her own query")
    if j in ctx.dropped:
        return ctx
    if j not in ctx.spec.neighbors:
        return ctx
    if j == ctx.distinguished:
        raise NewDistinguishedRequired(j)
    ctx.dropped[j] = k_tilde
    ctx.spec = drop_agent(ctx.spec, j)
    ctx.events.append({"event": "dropout", "agent": j, "k": k_tilde})
    ctx._publish_views()
    for h in ctx.spec.neighbors:
        ctx.net.send(ctx.owner, h, "dropout-notice", DropoutNotice(ctx.owner, j, k_tilde))
    ctx.net.advance()
    for h in ctx.spec.neighbors:
        ctx.net.receive(h, "dropout-notice")
    return ctx


# -- one-shot helpers -----------------------------------------------------

def make_agents(nodes, seed: int = 0) -> dict[int, Agent]:
    import random
    return {a: Agent(a, random.Random(f"{seed}/agent/{a}")) for a in nodes}


def star_network(spec: PolynomialSpec, **kwargs) -> Network:
    return Network(build_topology({"nodes": spec.members, "edges": [(spec.owner, j) for j in spec.neighbors]}),
                   **kwargs)


def run_query(spec: PolynomialSpec, values: Mapping[int, object], *, params: FieldParams | None = None,
              network: Network | None = None, agents=None, keys=None, key_bits: int = 512,
              share_mode: str = "direct", seed: int = 0, k: int = 0, distinguished=None,
              policy: str = "min-id", verify: bool = True) -> QueryResult:
    """Run one private query end to end on a fresh session."""
    if params is None:
        import random
        from .codec import DEFAULT_OMEGA_BITS
        params = FieldParams.generate(DEFAULT_OMEGA_BITS, random.Random(f"{seed}/omega"))
    if len(spec.neighbors) < 2:
        raise InsufficientNeighbors(f"agent {spec.owner} has {len(spec.neighbors)} neighbors, needs at least 2")
    network = network or star_network(spec, seed=seed)
    agents = agents or make_agents(network.topology.nodes, seed)
    session = QuerySession(spec, network, agents, params, keys=keys, key_bits=key_bits, share_mode=share_mode,
                           seed=seed, policy=policy, distinguished=distinguished, verify=verify)
    return session.run(k, values)


def run_query_multi(spec: PolynomialSpec, values, **kwargs) -> QueryResult:
    """Query with any number of product terms; each gets its own Steps 4 and 5 slot."""
    return run_query(spec, values, **kwargs)


def run_query_general(spec: PolynomialSpec, values, **kwargs) -> QueryResult:
    """Query whose features are whitelisted transforms of the private values.

    Transforms are applied before encoding, so the cryptographic path is
    the one of :func:`run_query`.
    """
    if spec.features is not None:
        for _, fmap in spec.features:
            for _, name in fmap:
                transform(name)  # validates against the whitelist
    return run_query(spec, values, **kwargs)


# -- error bound ----------------------------------------------------------

def error_bound(spec: PolynomialSpec, values: Mapping[int, object], params: FieldParams) -> float:
    """Worst-case gap between the decoded result and exact evaluation.

    Each private value is rounded once (error ``d = 2**-(f+1)``); every
    coefficient is rounded at its scale.  The bound telescopes through
    products using magnitudes inflated by the rounding error, so it is
    rigorous rather than first order.
    """
    d = 0.5 / params.scale
    S = common_scale(spec)
    i = spec.owner

    def feature(a, q):
        # (magnitude bound, error bound) of one encoded feature
        fmap = spec.feature_map(a)
        x = float(values[a])
        if fmap and q in fmap:
            return abs(transform(fmap[q])(x)) + d, d
        if q == 0:
            return 1.0, 0.0
        return (abs(x) + d) ** q, q * d * (abs(x) + d) ** (q - 1)

    def coeff(c, scale):
        err = abs(float(Fraction(lift(_coeff(c, params, scale), params), params.scale**scale) - Fraction(c)))
        return abs(float(c)) + err, err

    def product(parts):
        mag, err = 1.0, 0.0
        for m, e in parts:
            err = err * m + mag * e
            mag *= m
        return mag, err

    total = 0.0
    fi = spec.feature_map(i)
    for part in spec.bivariate:
        j = part.neighbor
        fj = spec.feature_map(j)
        for c, pi, pj in part.terms:
            scale = S - feature_scale(fi, pi) - feature_scale(fj, pj)
            total += product([coeff(c, scale), feature(i, pi), feature(j, pj)])[1]
    for term in spec.multiplicative:
        factors = []
        for a, f in term.factors:
            fa = spec.feature_map(a)
            scale = owner_factor_scale(spec, term, S) if a == i else factor_scale(fa, f)
            mag = err = 0.0
            for c, q in f.poly.terms:
                m, e = product([coeff(c, scale - feature_scale(fa, q)), feature(a, q)])
                mag, err = mag + m, err + e
            factors.append((mag, err))
        total += product(factors)[1]
    return total
