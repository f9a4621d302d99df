import math
import random

import pytest

from privpoly import kernels, paillier
from privpoly.codec import encode, lift
from privpoly.errors import (EncodingOverflow, InsufficientNeighbors, MissingContribution, RoleConflict,
                             ScaleError)
from privpoly.netsim import EAVESDROPPER, DropoutEvent, Network, build_topology, star
from privpoly.poly import UnivariatePoly, decompose, drop_agent, evaluate_plain, from_parts
from privpoly.protocol import (CIPHERTEXT_KINDS, EncCoeffs, QuerySession, _coeff, _factor_value, common_scale,
                               error_bound, evaluate_encoded, factor_scale, make_agents, owner_factor_scale,
                               run_query, run_query_general, select_distinguished, star_network,
                               step3_neighbor)
from privpoly.shares import ShareSet
from scenarios import magnitude, random_spec, random_values
from test_poly import EXAMPLE1, ONES, example1


def session(spec, field, keys, values, **kw):
    net = kw.pop("network", None) or star_network(spec, seed=kw.get("seed", 0))
    agents = make_agents(net.topology.nodes, kw.get("seed", 0))
    s = QuerySession(spec, net, agents, field, keys=keys, **kw)
    for a, v in values.items():
        agents[a].set_value(v)
    return s


def test_example1_with_distinguished_4(field, keys512):
    res = run_query(example1(), ONES, params=field, keys=keys512, distinguished=4)
    assert res.value == 13 and res.distinguished == 4
    assert res.encoded == evaluate_encoded(example1(), ONES, field)


def test_example1_step_messages(field, keys512):
    pk, sk = keys512
    om = field.omega
    x = {1: 1.5, 2: -1.25, 3: 0.75, 4: 2.0}
    spec = example1()
    s = session(spec, field, keys512, x, distinguished=4)
    res = s.run(0)
    assert res.value == pytest.approx(evaluate_plain(spec, x), abs=error_bound(spec, x, field))
    S = common_scale(spec)
    (term,) = spec.multiplicative
    shares = {a: s.agents[a].share(1, 0) for a in spec.members}
    owner_view = {e.sender: e.payload for e in s.net.transcripts[1] if e.kind in ("sigma-mu", "sigma-psi")}
    w = {a: _factor_value(None, term.factor(a), x[a], field,
                          owner_factor_scale(spec, term, S) if a == 1 else factor_scale(None, term.factor(a)))
         for a in spec.members}

    # plaintexts live in Z_n; the owner reduces them mod omega
    # agent 3: mu_3 = m_3 * W_3(x_3), sigma_3 = P_3 + a_3
    mu3 = paillier.decrypt(sk, pk, owner_view[3].mus[0]) % om
    assert mu3 == shares[3].multiplicative[0] * w[3] % om
    p3 = _coeff(3, field, S - 2) * encode(x[1], field, 1).residue * encode(x[3], field, 1).residue
    assert paillier.decrypt(sk, pk, owner_view[3].sigma) % om == (p3 + shares[3].additive) % om

    # forward to agent 4 carries Psi_1 = (m_1 W_1) mu_2 mu_3; Psi * m_4 W_4 telescopes to prod W
    (fwd,) = [e.payload for e in s.net.transcripts[4] if e.kind == "psi-forward"]
    psi = paillier.decrypt(sk, pk, fwd.psis[0][0])
    assert psi == shares[1].multiplicative[0] * w[1] * shares[2].multiplicative[0] * w[2] * mu3 % om
    prod_w = w[1] * w[2] * w[3] * w[4] % om
    assert psi * shares[4].multiplicative[0] * w[4] % om == prod_w

    # Step 5 reply: P_4 + a_4 + prod W
    p4 = _coeff(4, field, S - 4) * encode(x[1], field, 1).residue * pow(encode(x[4], field, 1).residue, 3, om)
    assert paillier.decrypt(sk, pk, owner_view[4].value) % om == (p4 + shares[4].additive + prod_w) % om


def test_affine_skips_steps_4_and_5(field, keys512):
    spec = from_parts(1, [2, 3, 4], {2: [(2, 0, 1)], 3: [(-1, 0, 1)], 4: [(0.5, 0, 1), (3, 1, 0)]}, [])
    x = {1: 1, 2: 2, 3: 3, 4: 4}
    res = run_query(spec, x, params=field, keys=keys512)
    assert res.value == 4 - 3 + 2 + 3
    assert res.distinguished is None
    assert res.messages["psi-forward"] == 0 and res.messages["sigma-psi"] == 0
    assert res.messages["sigma-mu"] == 3


def test_zero_polynomial_sigma_is_the_mask(field, keys512):
    pk, sk = keys512
    spec = from_parts(1, [2, 3], {}, [])
    s = session(spec, field, keys512, {1: 1, 2: 1, 3: 1})
    res = s.run(0)
    assert res.value == 0
    for e in s.net.transcripts[1]:
        if e.kind == "sigma-mu":
            assert paillier.decrypt(sk, pk, e.payload.sigma) % field.omega == s.agents[e.sender].share(1, 0).additive


@pytest.mark.parametrize("T", [1, 2, 3])
def test_multi_term_sweep(T, field, keys512):
    rng = random.Random(T)
    for _ in range(8):
        spec = random_spec(rng, rng.randint(2, 5), T=T)
        x = random_values(rng, spec.members)
        res = run_query(spec, x, params=field, keys=keys512, seed=rng.randrange(100))
        assert res.encoded == evaluate_encoded(spec, x, field)
        assert abs(res.value - evaluate_plain(spec, x)) <= error_bound(spec, x, field)
        assert abs(res.value - evaluate_plain(spec, x)) <= 2**-15 * magnitude(spec, x)
        assert res.messages["psi-forward"] == 1 and res.messages["sigma-psi"] == 1


def test_proportional_products(field, keys512):
    w = {2: UnivariatePoly(((1, 1), (2, 2))), 3: UnivariatePoly(((1, 1),))}
    spec = from_parts(1, [2, 3], {}, [w, {**w, 1: UnivariatePoly(((-3, 0),))}])
    x = {1: 0.5, 2: 1.5, 3: -2.0}
    res = run_query(spec, x, params=field, keys=keys512)
    assert res.value == pytest.approx(-2 * (1.5 + 2 * 2.25) * -2.0, abs=1e-9)


def test_share_modes_agree(field, keys512):
    x = {1: 1.25, 2: -1.5, 3: 1.75, 4: -2.0}
    a = run_query(example1(), x, params=field, keys=keys512, share_mode="direct")
    b = run_query(example1(), x, params=field, keys=keys512, share_mode="prf")
    assert a.encoded == b.encoded
    assert b.messages["share"] == 0 and a.messages["share"] == 4 * 3


def test_sin_transform(field, keys512):
    spec = from_parts(1, [2, 3], {2: [(2, 1, 1)], 3: [(1, 0, 1)]},
                      [{2: UnivariatePoly(((1, 1),)), 3: UnivariatePoly(((1, 1),))}], features={3: {1: "sin"}})
    x = {1: 0.5, 2: 1.25, 3: 0.3}
    res = run_query_general(spec, x, params=field, keys=keys512)
    exact = 2 * 0.5 * 1.25 + math.sin(0.3) + 1.25 * math.sin(0.3)
    assert abs(res.value - exact) <= error_bound(spec, x, field) <= 2**-14


def test_fallback_backend_gives_same_residue(field, keys512, monkeypatch):
    x = {1: 1.5, 2: -1.25, 3: 0.75, 4: 2.0}
    fast = run_query(example1(), x, params=field, keys=keys512)
    py = kernels.available_backends()["python"]
    monkeypatch.setattr(kernels, "powmod", py.powmod)
    monkeypatch.setattr(kernels, "prod_powmod", py.prod_powmod)
    assert run_query(example1(), x, params=field, keys=keys512).encoded == fast.encoded


def test_errors(field, keys512):
    spec = from_parts(1, [2], {2: [(1, 1, 1)]}, [])
    with pytest.raises(InsufficientNeighbors):
        run_query(spec, {1: 1, 2: 1}, params=field, keys=keys512)
    s = session(example1(), field, keys512, ONES, distinguished=4)
    view = s.agents[2].views[1]
    bad = EncCoeffs(1, 0, view.scale + 1, keys512[0].ciphertext_bytes, (), ())
    with pytest.raises(ScaleError):
        step3_neighbor(view, bad, 1, ShareSet(2, 0, 0, (1,)), keys512[0], field, random.Random(0))
    with pytest.raises(MissingContribution):
        s.agents[2].share(1, 99)
    s.run(0)
    with pytest.raises(RoleConflict):
        s.agents[2]._claim(1, 0, "distinguished")
    with pytest.raises(RoleConflict):
        (fwd,) = [e.payload for e in s.net.transcripts[4] if e.kind == "psi-forward"]
        s.agents[3].on_psi_forward(s.net, fwd, None, field)
    with pytest.raises(EncodingOverflow):
        run_query(example1(), {**ONES, 4: 2.0**50}, params=field, keys=keys512)


def test_select_distinguished():
    assert select_distinguished([3, 2, 4]) == 2
    a = select_distinguished([2, 3, 4, 7], "seeded-hash", seed=5)
    assert a == select_distinguished([7, 4, 3, 2], "seeded-hash", seed=5)
    with pytest.raises(InsufficientNeighbors):
        select_distinguished([])


def test_dropout_matches_oracle(field, keys512):
    x = {1: 1.25, 2: -1.5, 3: 1.75, 4: -2.0}
    for mode in ("direct", "prf"):
        s = session(example1(), field, keys512, x, distinguished=2, share_mode=mode)
        before = s.run(0)
        s.net.inject_dropout(DropoutEvent(3, 1))
        after = s.run(1)
        assert before.encoded == evaluate_encoded(example1(), x, field)
        assert after.encoded == evaluate_encoded(drop_agent(example1(), 3), x, field)
        assert any(e.kind == "dropout-notice" for e in s.net.transcripts[4])


def test_distinguished_dropout_reselects(field, keys512, caplog):
    x = {1: 1.25, 2: -1.5, 3: 1.75, 4: -2.0}
    s = session(example1(), field, keys512, x)
    assert s.distinguished == 2
    s.net.inject_dropout(DropoutEvent(2, 0))
    assert s.distinguished == 3
    assert s.events[0]["event"] == "reselect-distinguished"
    res = s.run(0)
    assert res.distinguished == 3
    assert res.encoded == evaluate_encoded(drop_agent(example1(), 2), x, field)


def test_drop_at_zero_equals_smaller_network(field, keys512):
    x = {1: 1.25, 2: -1.5, 3: 1.75, 4: -2.0}
    s = session(example1(), field, keys512, x, distinguished=4)
    s.net.inject_dropout(DropoutEvent(2, 0))
    small = drop_agent(example1(), 2)
    ref = run_query(small, x, params=field, keys=keys512, distinguished=4)
    assert s.run(0).encoded == ref.encoded


def test_transcript_hygiene_structure(field, keys512):
    x = {1: 1.25, 2: -1.5, 3: 1.75, 4: -2.0}
    s = session(example1(), field, keys512, x, distinguished=4)
    s.run(0)
    owner_in = {e.kind for e in s.net.transcripts[1] if e.role == "recipient"}
    assert owner_in <= {"sigma-mu", "sigma-psi", "share", "prf-key"}
    for j in (2, 3, 4):
        for e in s.net.transcripts[j]:
            assert e.kind in {"publish-key", "enc-coeffs", "psi-forward", "share"}
            if e.role == "relay":
                assert e.sealed and e.payload is None
    for e in s.net.transcripts[EAVESDROPPER]:
        assert e.sealed or e.kind in CIPHERTEXT_KINDS or e.kind == "publish-key"
        if e.kind in CIPHERTEXT_KINDS:
            assert all(isinstance(c, paillier.Ciphertext) for c in e.payload.values())


def test_message_counts(field, keys512):
    rng = random.Random(9)
    for n in (2, 4, 6):
        spec = random_spec(rng, n, T=2)
        res = run_query(spec, random_values(rng, spec.members), params=field, keys=keys512)
        assert res.messages["enc-coeffs"] == n
        assert res.messages["sigma-mu"] == n - 1
        rec = res.record()
        assert rec["messages"] == res.message_count and rec["result"] == res.value
        assert '"owner": 1' in res.to_json()
