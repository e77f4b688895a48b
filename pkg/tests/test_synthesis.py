"""Safety-game solving, shields, distributed composition, serialization."""

import numpy as np
import pytest

from agshield.core import (ActionSpace, Lts, SafetyProp, StateSpace,
                           VarDomain, check_models, shielded_lts)
from agshield.errors import (CompatibilityFailure, EmptyWinningSet,
                             FormatError)
from agshield.projection import Projection, project_lts
from agshield.synthesis import (DistributedShield, ExtendedShield, Shield,
                                assume_guarantee_synthesize,
                                certify_compositional, compose_distributed,
                                deserialize_shield, extend_shield,
                                most_permissive_shield,
                                oracle_global_pipeline, serialize_shield,
                                synthesize_local_shield, winning_states)
from agshield.casestudies.toy import CounterexampleToy


def line_space(n):
    return StateSpace((VarDomain.int_range("s", 0, n - 1),))


def test_winning_states_whole_space_safe():
    sp = line_space(3)
    acts = ActionSpace.single(("a",))
    t = Lts.from_triples(sp, acts, [(0, 0, 1), (1, 0, 2), (2, 0, 0)])
    phi = SafetyProp(sp, np.ones(3, dtype=bool))
    assert winning_states(t, phi).all()


def test_winning_states_forced_choice():
    # s0 has a safe self-loop (b) and a doomed action (a); s1 is unsafe
    sp = line_space(2)
    acts = ActionSpace.single(("a", "b"))
    t = Lts.from_triples(sp, acts, [(0, 0, 1), (0, 1, 0), (1, 0, 1)])
    phi = SafetyProp.from_indices(sp, [0])
    win = winning_states(t, phi)
    assert win.tolist() == [True, False]
    sh = most_permissive_shield(t, phi)
    assert sh.allowed(0) == [1]


def test_toy_global_most_permissive_shield():
    toy = CounterexampleToy()
    phi = SafetyProp(toy.space, toy.global_safe_member())
    sh = most_permissive_shield(toy._lts, phi)
    s00 = toy.space.index((0, 0))
    labels = [toy.actions.joint_labels(a) for a in sh.allowed(s00)]
    assert labels == [("z", "z"), ("z", "p"), ("p", "z")]
    assert sh.winning.tolist() == [True, True, True, False]


def test_most_permissive_shield_soundness_and_maximality():
    rng = np.random.default_rng(424242)
    checked = 0
    for _ in range(60):
        n_s = int(rng.integers(2, 10))
        n_a = int(rng.integers(1, 4))
        sp = line_space(n_s)
        acts = ActionSpace.single(tuple(f"a{k}" for k in range(n_a)))
        triples = []
        for s in range(n_s):
            on = [a for a in range(n_a) if rng.random() < 0.8] or [0]
            for a in on:
                for _ in range(int(rng.integers(1, 3))):
                    triples.append((s, a, int(rng.integers(n_s))))
        t = Lts.from_triples(sp, acts, triples)
        phi = SafetyProp(sp, rng.random(n_s) < 0.8)
        try:
            sh = most_permissive_shield(t, phi)
        except EmptyWinningSet:
            continue
        checked += 1
        win = sh.winning
        for s in range(n_s):
            enabled = [a for a in range(n_a) if t.succ(s, a).size]
            for a in enabled:
                succ_all_win = bool(win[t.succ(s, a)].all())
                allowed = a in sh.allowed(s)
                if allowed:
                    # soundness: allowed actions stay in the winning region
                    assert win[s] and succ_all_win
                elif win[s]:
                    # maximality: any disallowed action escapes it
                    assert not succ_all_win
        # winning states lie inside phi and the fixpoint is idempotent
        assert not (win & ~phi.member).any()
        assert np.array_equal(winning_states(t, phi), win)
    assert checked >= 20


def test_empty_winning_set_raised():
    sp = line_space(2)
    acts = ActionSpace.single(("a",))
    t = Lts.from_triples(sp, acts, [(0, 0, 1), (1, 0, 0)])
    with pytest.raises(EmptyWinningSet):
        most_permissive_shield(t, SafetyProp.from_indices(sp, [0]))


def toy_local_shields():
    toy = CounterexampleToy()
    ns = toy.global_nagent()
    shields = []
    for i in (0, 1):
        local = project_lts(ns, i)
        shields.append(synthesize_local_shield(
            local, toy.agent_prop_member(i), ns.projections[i]))
    return toy, ns, shields


def test_extend_shield_component_masks():
    toy, ns, (sh1, sh2) = toy_local_shields()
    assert sh1.allowed(0) == [0]       # only z locally
    ext1 = extend_shield(sh1, 0, ns.projections[0], toy.actions)
    s00 = toy.space.index((0, 0))
    mask = ext1.allow_at(s00)
    joints = [toy.actions.joint_labels(a) for a in range(4) if mask >> a & 1]
    assert joints == [("z", "z"), ("z", "p")]
    # all-allow local shield extends to all joint actions
    full = Shield(sh1.space, sh1.action_labels,
                  np.array([0b11, 0b11], dtype=np.uint64),
                  np.array([True, True]))
    assert extend_shield(full, 0, ns.projections[0], toy.actions) \
        .allow_at(s00) == 0b1111


def test_compose_distributed_toy_joint_action():
    toy, ns, shields = toy_local_shields()
    dist = compose_distributed(shields, ns.projections, toy.actions)
    s00 = toy.space.index((0, 0))
    mask = dist.allow_at(s00)
    assert [toy.actions.joint_labels(a) for a in range(4) if mask >> a & 1] \
        == [("z", "z")]
    gsh = dist.materialize(toy.space)
    tsh = shielded_lts(toy._lts, gsh)
    phi = SafetyProp(toy.space, toy.global_safe_member())
    assert check_models(tsh, phi, [s00]).safe


def test_compose_distributed_failure_at_nonwinning_obs():
    toy, ns, shields = toy_local_shields()
    dist = compose_distributed(shields, ns.projections, toy.actions)
    s11 = toy.space.index((1, 1))
    with pytest.raises(CompatibilityFailure):
        dist.allow_at(s11)
    assert not dist.winning_at(s11)


def test_single_agent_distributed_equals_extended():
    toy, ns, shields = toy_local_shields()
    dist = DistributedShield([ExtendedShield(shields[0], 0, toy.actions,
                                             ns.projections[0])])
    ext = extend_shield(shields[0], 0, ns.projections[0], toy.actions)
    s00 = toy.space.index((0, 0))
    assert dist.allow_at(s00) == ext.allow_at(s00)


def test_standard_projection_shields_admit_unsafety():
    # with the standard projection every local observation looks safe, the
    # local shields allow everything, and the joint pressed action slips by
    from agshield.projection import project_set
    toy = CounterexampleToy()
    ns = toy.global_nagent()
    shields = []
    for i in (0, 1):
        local = project_lts(ns, i)
        member = project_set(ns.projections[i], toy.agent_prop_member(i))
        shields.append(synthesize_local_shield(local, member))
    s00 = toy.space.index((0, 0))
    dist = compose_distributed(shields, ns.projections, toy.actions)
    mask = dist.allow_at(s00)
    pp = toy.actions.joint_index((1, 1))
    assert mask >> pp & 1    # (p,p) is permitted
    gsh = dist.materialize(toy.space)
    tsh = shielded_lts(toy._lts, gsh)
    phi = SafetyProp(toy.space, toy.global_safe_member())
    v = check_models(tsh, phi, [s00])
    assert not v.safe
    assert v.counterexample.states[-1] == toy.space.index((1, 1))


def test_assume_guarantee_synthesize_toy():
    toy = CounterexampleToy()
    shields, report = assume_guarantee_synthesize(toy, assume=True)
    assert [sh.allowed(0) for sh in shields] == [[0], [0]]
    assert len(report.per_agent) == 2
    fractions = [r.winning_fraction for r in report.per_agent]
    assert fractions == [0.5, 0.5]


def test_oracle_pipeline_matches_compositional_toy():
    toy = CounterexampleToy()
    res = certify_compositional(toy, assume=True)
    assert res.ok
    assert res.winning_initials == 1


def test_oracle_single_agent_coincides_with_direct_synthesis():
    # a 1-agent system: the oracle pipeline is plain local synthesis
    sp = line_space(3)
    acts = ActionSpace.single(("a", "b"))
    t = Lts.from_triples(sp, acts, [(0, 0, 1), (0, 1, 0), (1, 0, 2),
                                    (1, 1, 0), (2, 0, 2), (2, 1, 2)])
    phi_member = np.array([True, True, False])

    class OneAgent:
        n_agents = 1

        def guarantee_order(self):
            return [0]

        def global_nagent(self, guard=None):
            return __import__("agshield.projection", fromlist=["NAgentSystem"]) \
                .NAgentSystem(t, [Projection(sp, (0,))])

        def agent_prop_member(self, i):
            return phi_member

        def global_safe_member(self):
            return phi_member

    direct = most_permissive_shield(t, SafetyProp(sp, phi_member))
    oracle = oracle_global_pipeline(OneAgent(), assume=True)[0]
    assert np.array_equal(direct.allow, oracle.allow)


def test_sampled_global_outcomes_project_into_local_shielded_games():
    # runs of the globally shielded system project to runs of the local
    # shielded LTSs
    rng = np.random.default_rng(2244)
    toy, ns, shields = toy_local_shields()
    dist = compose_distributed(shields, ns.projections, toy.actions)
    gsh = dist.materialize(toy.space)
    tsh = shielded_lts(toy._lts, gsh)
    local_shielded = []
    for i in (0, 1):
        lt = project_lts(ns, i)
        local_shielded.append(shielded_lts(lt, shields[i]).transition_set())
    s = toy.initial
    for _ in range(50):
        acts = [a for a in range(tsh.n_actions) if tsh.succ(s, a).size]
        a = acts[int(rng.integers(len(acts)))]
        succ = tsh.succ(s, a)
        s2 = int(succ[int(rng.integers(succ.size))])
        for i in (0, 1):
            p = ns.projections[i]
            triple = (p.obs_of_state(s), tsh.actions.component(a, i),
                      p.obs_of_state(s2))
            assert triple in local_shielded[i]
        s = s2


# ---------------------------------------------------------------------------
# Shield file format
# ---------------------------------------------------------------------------


def test_serialize_round_trip():
    toy, ns, (sh1, sh2) = toy_local_shields()
    data = serialize_shield(sh1)
    back = deserialize_shield(data)
    assert np.array_equal(back.allow, sh1.allow)
    assert back.action_labels == sh1.action_labels
    assert serialize_shield(back) == data


def test_serialize_format_exact():
    sp = StateSpace((VarDomain.int_range("x", 0, 1),))
    sh = Shield(sp, ("a", "b"), np.array([0b11, 0], dtype=np.uint64),
                np.array([True, False]))
    data = serialize_shield(sh)
    assert data == (b"DSHIELD v1\nvars 1\nvar x int 0 1 1\nactions 2\n"
                    b"action 0 a\naction 1 b\nstates 2\n3\n0\n")
    assert b"\r" not in data
    # a non-winning state encodes as bitmask 0
    assert data.endswith(b"\n0\n")


def test_deserialize_truncated_and_corrupt():
    toy, ns, (sh1, _) = toy_local_shields()
    data = serialize_shield(sh1)
    with pytest.raises(FormatError):
        deserialize_shield(data[:-3])           # truncated state table
    bad = data.replace(b"DSHIELD v1", b"DSHIELD v9")
    with pytest.raises(FormatError) as exc:
        deserialize_shield(bad)
    assert exc.value.line == 1
    with pytest.raises(FormatError):
        deserialize_shield(data + b"junk\n")    # trailing content
    with pytest.raises(FormatError):
        # bitmask out of range for the declared action count
        deserialize_shield(data.replace(b"states 2\n1\n", b"states 2\nff\n"))


def test_serialize_round_trip_enum_domains():
    sp = StateSpace((VarDomain.enum("mode", ("idle", "busy")),
                     VarDomain.int_range("level", 0, 2)))
    allow = np.array([1, 2, 0, 1, 3, 0], dtype=np.uint64)
    sh = Shield(sp, ("go", "halt"), allow, allow != 0)
    data = serialize_shield(sh)
    assert b"var mode enum idle busy\n" in data
    back = deserialize_shield(data)
    assert back.space.dims[0].labels == ("idle", "busy")
    assert np.array_equal(back.allow, allow)
    assert serialize_shield(back) == data


def test_deserialize_rejects_wrong_state_count():
    sp = StateSpace((VarDomain.int_range("x", 0, 1),))
    sh = Shield(sp, ("a",), np.array([1, 1], dtype=np.uint64),
                np.array([True, True]))
    data = serialize_shield(sh).replace(b"states 2", b"states 3")
    with pytest.raises(FormatError, match="domain product"):
        deserialize_shield(data)
