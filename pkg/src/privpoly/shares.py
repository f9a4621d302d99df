"""Additive and multiplicative mask shares over Z_omega.

For a query group (the owner's closed neighborhood) and time index ``k``
every member ``j`` ends up with ``a_j`` and ``m_j^t`` (``t = 1..T``) such
that ``sum_j a_j = 0`` and ``prod_j m_j^t = 1`` modulo omega.

Two generation paths:

* direct: each member draws a full contribution vector per ``k`` and
  ships the off-diagonal entries through the owner as sealed envelopes;
* PRF: members exchange AES keys once, then derive every ``k`` locally.
  Each member's self-directed share is the correction that makes its own
  outgoing PRF values sum to 0 (multiply to 1), so the group relation
  holds for every ``k`` without further traffic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.ciphers import algorithms
from cryptography.hazmat.primitives.cmac import CMAC

from .errors import GroupTooSmall, MissingContribution, ProtocolAbort
from .modmath import RandomSource, mod_inv

KEY_BYTES = 16


@dataclass(frozen=True)
class ShareContribution:
    sender: int
    recipient: int
    k: int
    additive: int
    multiplicative: tuple = ()


@dataclass(frozen=True)
class ShareSet:
    owner: int
    k: int
    additive: int
    multiplicative: tuple = ()


def _nonzero(rng: RandomSource, omega: int) -> int:
    return rng.randrange(1, omega)


def gen_contributions_direct(j: int, group, T: int, k: int, omega: int,
                             rng: RandomSource) -> list[ShareContribution]:
    """Contributions of ``j`` to every member; the last one is the correction."""
    group = sorted(group)
    if len(group) < 2:
        raise GroupTooSmall("share groups need at least two members")
    adds = [rng.randrange(omega) for _ in group[:-1]]
    adds.append(-sum(adds) % omega)
    muls = []
    for _ in range(T):
        col = [_nonzero(rng, omega) for _ in group[:-1]]
        prod = 1
        for v in col:
            prod = prod * v % omega
        col.append(mod_inv(prod, omega))
        muls.append(col)
    return [
        ShareContribution(j, h, k, adds[idx], tuple(m[idx] for m in muls))
        for idx, h in enumerate(group)
    ]


def aggregate_shares(j: int, received, group, k: int, omega: int, T: int | None = None) -> ShareSet:
    """Combine one contribution from every member into ``j``'s ShareSet."""
    by_sender = {}
    for c in received:
        if c.recipient != j or c.k != k:
            raise MissingContribution(f"contribution for ({c.recipient}, k={c.k}) delivered to ({j}, k={k})")
        if c.sender in by_sender:
            raise MissingContribution(f"duplicate contribution from {c.sender}")
        by_sender[c.sender] = c
    missing = sorted(set(group) - set(by_sender))
    if missing:
        raise MissingContribution(f"agent {j} lacks contributions from {missing} at k={k}")
    extra = sorted(set(by_sender) - set(group))
    if extra:
        raise MissingContribution(f"contributions from non-members {extra}")
    if T is None:
        T = len(next(iter(by_sender.values())).multiplicative)
    add = sum(c.additive for c in by_sender.values()) % omega
    muls = []
    for t in range(T):
        prod = 1
        for c in by_sender.values():
            if len(c.multiplicative) < T:
                raise MissingContribution(f"{c.sender} sent {len(c.multiplicative)} multiplicative shares, need {T}")
            prod = prod * c.multiplicative[t] % omega
        muls.append(prod)
    return ShareSet(j, k, add, tuple(muls))


def merge_on_dropout(own, dropped: int, omega: int, owner: int | None = None) -> list[ShareContribution]:
    """Fold the share meant for ``dropped`` into the sender's self-share.

    ``own`` are the contributions one surviving member generated for a
    single ``k``.  Calling again after the merge is a no-op.
    """
    if owner is not None and dropped == owner:
        raise ProtocolAbort("the query owner cannot drop out of her own query")
    own = list(own)
    to_dropped = [c for c in own if c.recipient == dropped]
    if not to_dropped:
        return own
    (gone,) = to_dropped
    out = []
    for c in own:
        if c.recipient == dropped:
            continue
        if c.recipient == c.sender:
            c = ShareContribution(
                c.sender, c.recipient, c.k,
                (c.additive + gone.additive) % omega,
                tuple(a * b % omega for a, b in zip(c.multiplicative, gone.multiplicative)),
            )
        out.append(c)
    return out


def check_relations(share_sets, omega: int) -> bool:
    share_sets = list(share_sets)
    if sum(s.additive for s in share_sets) % omega != 0:
        return False
    T = len(share_sets[0].multiplicative) if share_sets else 0
    for t in range(T):
        prod = 1
        for s in share_sets:
            prod = prod * s.multiplicative[t] % omega
        if prod != 1:
            return False
    return all(m % omega for s in share_sets for m in s.multiplicative)


# PRF path ---------------------------------------------------------------

def prf_eval(key: bytes, seed: int, omega: int, domain: bytes = b"") -> int:
    """Pseudorandom element of Z_omega from AES-CMAC in counter mode.

    Output blocks are concatenated to the bit length of omega and
    rejection-sampled, so the result is uniform on ``[0, omega)``.
    """
    if len(key) != KEY_BYTES:
        raise ValueError("PRF keys are 16 bytes")
    bits = omega.bit_length()
    nblocks = -(-bits // 128)
    mask = (1 << bits) - 1
    seed_bytes = seed.to_bytes(max(1, (seed.bit_length() + 7) // 8), "big")
    prefix = len(domain).to_bytes(2, "big") + domain + seed_bytes
    attempt = 0
    while True:
        acc = 0
        for block in range(nblocks):
            mac = CMAC(algorithms.AES(key))
            mac.update(prefix + attempt.to_bytes(4, "big") + block.to_bytes(2, "big"))
            acc = (acc << 128) | int.from_bytes(mac.finalize(), "big")
        value = (acc >> (128 * nblocks - bits)) & mask
        if value < omega:
            return value
        attempt += 1


def public_seed_key(S: int) -> bytes:
    return hashlib.sha256(b"privpoly-seed" + S.to_bytes(max(1, (S.bit_length() + 7) // 8), "big")).digest()[:KEY_BYTES]


def gamma(S: int, k: int, omega: int) -> int:
    """Per-time-index public seed derived from the agreed value ``S``."""
    return prf_eval(public_seed_key(S), k, omega, b"gamma")


def _mul_draw(key: bytes, g: int, omega: int, t: int) -> int:
    retry = 0
    while True:
        v = prf_eval(key, g, omega, b"mul" + t.to_bytes(2, "big") + retry.to_bytes(2, "big"))
        if v:
            return v
        retry += 1


@dataclass
class PrfKeyBundle:
    """Keys one member holds: outgoing ``(alpha, kappa)`` to, and incoming from, each peer."""

    member: int
    seed: int
    outgoing: dict = field(default_factory=dict)  # h -> (alpha_jh, kappa_jh)
    incoming: dict = field(default_factory=dict)  # h -> (alpha_hj, kappa_hj)

    def shares(self, k: int, T: int, omega: int, alive=None) -> ShareSet:
        """This member's ShareSet at ``k``; computed locally, no messages."""
        g = gamma(self.seed, k, omega)
        # merging the dropped peer's share into the self-share (a_hh += a_hj)
        # is the same as leaving it out of the correction
        peers_in = [h for h in self.incoming if alive is None or h in alive]
        peers_out = [h for h in self.outgoing if alive is None or h in alive]
        add = 0
        for h in peers_out:
            add -= prf_eval(self.outgoing[h][0], g, omega, b"add")
        for h in peers_in:
            add += prf_eval(self.incoming[h][0], g, omega, b"add")
        muls = []
        for t in range(1, T + 1):
            out_prod = 1
            for h in peers_out:
                out_prod = out_prod * _mul_draw(self.outgoing[h][1], g, omega, t) % omega
            prod = mod_inv(out_prod, omega)
            for h in peers_in:
                prod = prod * _mul_draw(self.incoming[h][1], g, omega, t) % omega
            muls.append(prod)
        return ShareSet(self.member, k, add % omega, tuple(muls))


def draw_prf_keys(j: int, group, rng: RandomSource) -> dict:
    """Keys ``j`` generates for every peer: ``{h: (alpha_jh, kappa_jh)}``."""
    return {
        h: (rng.getrandbits(128).to_bytes(KEY_BYTES, "big"), rng.getrandbits(128).to_bytes(KEY_BYTES, "big"))
        for h in sorted(group) if h != j
    }


def exchange_prf_keys(group, seed: int, rng: RandomSource) -> dict[int, PrfKeyBundle]:
    """One-shot key setup for a group without a network (library use)."""
    group = sorted(group)
    if len(group) < 2:
        raise GroupTooSmall("share groups need at least two members")
    bundles = {j: PrfKeyBundle(j, seed) for j in group}
    for j in group:
        for h, keys in draw_prf_keys(j, group, rng).items():
            bundles[j].outgoing[h] = keys
            bundles[h].incoming[j] = keys
    return bundles


def gen_shares_prf(bundles: dict[int, PrfKeyBundle], group, T: int, k: int, omega: int,
                   dropped=()) -> dict[int, ShareSet]:
    alive = set(group) - set(dropped)
    return {j: bundles[j].shares(k, T, omega, alive) for j in sorted(alive)}
