import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whittlemaint import mdp
from whittlemaint.index import IndexTable, Variant, w_index
from whittlemaint.model import FleetSpec
from whittlemaint.policy import (Policy, PolicyError, PolicyKind, decide, enumerate_thresholds,
                                 index_policy, myopic_policy, naive_policy, select,
                                 threshold_levels)

from conftest import random_indexable


def table(w, machine_id=None):
    w = np.asarray(w, dtype=float)
    return IndexTable(w=w, h=w.copy(), indexable=True, variant=Variant.FAILURES, machine_id=machine_id)


def index_from(ws, seed=0, allow_idle=True):
    return Policy(PolicyKind.INDEX, index_tables=[table(w, i) for i, w in enumerate(ws)], seed=seed,
                  allow_idle=allow_idle)


def test_index_and_naive_diverge_when_state_order_disagrees_with_index_order():
    # machine 2 (1-based) is more worn than machine 3 but has the lower index
    ws = [np.array([-1.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
          np.array([-1.0, 1.0, 1.5, 2.0, 2.5, 3.0]),
          np.array([-1.0, 5.0, 10.0, 15.0, 20.0, 25.0]),
          np.array([-1.0, 0.5, 1.0, 1.5, 2.0, 2.5]),
          np.array([-1.0, 20.0, 40.0, 60.0, 80.0, 99.0])]
    states = [1, 4, 2, 1, 5]
    idx = decide(index_from(ws), states, 2)
    nv = decide(naive_policy(), states, 2)
    assert {m + 1 for m in idx} == {5, 3}
    assert {m + 1 for m in nv} == {5, 2}


@pytest.mark.parametrize("kind", list(PolicyKind))
def test_all_new_machines_select_nothing(kind, rng):
    fleet = FleetSpec([random_indexable(rng, 6) for _ in range(3)], 2)
    pol = {PolicyKind.INDEX: lambda: index_policy(fleet),
           PolicyKind.MYOPIC: lambda: Policy(PolicyKind.MYOPIC, [w_index(m) for m in fleet.machines]),
           PolicyKind.NAIVE: naive_policy,
           PolicyKind.THRESHOLD: lambda: enumerate_thresholds(fleet, 1)[0]}[kind]()
    assert decide(pol, [0, 0, 0], 2) == frozenset()


def test_fair_tie_breaking():
    pol = index_from([[-1.0, 3.0, 4.0], [-1.0, 3.0, 4.0]], seed=7)
    counts = Counter()
    for _ in range(10_000):
        (m,) = decide(pol, [2, 2], 1)
        counts[m] += 1
    assert abs(counts[0] / 10_000 - 0.5) <= 0.02


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 6), R=st.integers(1, 3))
def test_idle_rule_matches_virtual_machines(seed, M, R):
    rng = np.random.default_rng(seed)
    ws = [np.r_[-1.0, np.sort(rng.normal(0.0, 10.0, 5))] for _ in range(M)]
    states = rng.integers(0, 6, M)
    plain = decide(index_from(ws), states, R)
    virtual = index_from(ws + [np.zeros(2)] * R, allow_idle=False)
    chosen = decide(virtual, np.r_[states, np.ones(R, dtype=int)], R)
    assert plain == frozenset(m for m in chosen if m < M)


def test_idle_never_selects_nonpositive():
    pol = index_from([[-1.0, -2.0, 0.0, 3.0]] * 3)
    assert decide(pol, [1, 2, 3], 3) == frozenset({2})
    assert decide(index_from([[-1.0, -2.0, 0.0, 3.0]] * 3, allow_idle=False), [1, 2, 3], 3) == {0, 1, 2}


def test_threshold_levels():
    assert threshold_levels(24, 8) == [3, 5, 8, 11, 13, 16, 19, 21]
    assert threshold_levels(24, 1) == [12]
    for n in range(3, 40):
        for c in range(1, n - 1):
            assert all(0 < v < n - 1 for v in threshold_levels(n, c))
    with pytest.raises(PolicyError):
        threshold_levels(5, 4)


def test_threshold_selects_at_or_above_level():
    pol = Policy(PolicyKind.THRESHOLD, levels=(3, 3, 3), seed=1)
    assert decide(pol, [2, 3, 5], 3) == frozenset({1, 2})
    assert decide(pol, [2, 3, 5], 1) == frozenset({2})


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.05, 20.0))
def test_index_decisions_scale_invariant(seed, lam):
    rng = np.random.default_rng(seed)
    ms = [random_indexable(rng, 6) for _ in range(3)]
    a = index_policy(FleetSpec(ms, 2))
    b = index_policy(FleetSpec([m.scaled_costs(lam) for m in ms], 2))
    states = mdp.joint_states((6, 6, 6))
    acts = mdp.joint_actions(3, 2)
    np.testing.assert_allclose(a.action_probabilities(states, acts, 2),
                               b.action_probabilities(states, acts, 2))


def test_decide_is_deterministic_per_seed():
    ws = [[-1.0, 1.0, 2.0]] * 4
    pa, pb = index_from(ws, seed=3), index_from(ws, seed=3)
    seq_a = [decide(pa, [2, 2, 2, 2], 2) for _ in range(50)]
    seq_b = [decide(pb, [2, 2, 2, 2], 2) for _ in range(50)]
    assert seq_a == seq_b
    assert len(set(seq_a)) > 1


def test_action_probabilities_match_sampled_frequencies():
    ws = [[-1.0, 2.0, 5.0], [-1.0, 2.0, 5.0], [-1.0, 2.0, 5.0], [-1.0, 1.0, 9.0]]
    pol = index_from(ws, seed=11)
    state = np.array([[2, 2, 2, 1]])
    acts = mdp.joint_actions(4, 2)
    P = pol.action_probabilities(state, acts, 2)[0]
    n = 6000
    freq = Counter(decide(pol, state[0], 2) for _ in range(n))
    for a, p in zip(acts, P):
        assert freq[frozenset(a)] / n == pytest.approx(p, abs=0.03)
    assert P.sum() == pytest.approx(1.0)


def test_selection_never_exceeds_repairmen(rng):
    for _ in range(200):
        score = rng.normal(size=5)
        ok = rng.random(5) < 0.7
        R = int(rng.integers(1, 4))
        chosen = select(score, ok, rng.random(5), R)
        assert len(chosen) <= R and all(ok[m] for m in chosen)


def test_policy_errors():
    with pytest.raises(PolicyError):
        Policy(PolicyKind.INDEX)
    with pytest.raises(PolicyError):
        Policy(PolicyKind.THRESHOLD)
    bad = IndexTable(w=np.array([]), h=np.array([0.0, 2.0, 1.0]), indexable=False,
                     variant=Variant.FAILURES, machine_id=0)
    with pytest.raises(PolicyError, match="not indexable"):
        Policy(PolicyKind.INDEX, index_tables=[bad])


def test_myopic_uses_perfect_kernel(illustrative_fleet):
    pol = myopic_policy(illustrative_fleet)
    assert pol.name == "MyopicPerfect"
    assert all(t.variant is Variant.PERFECT for t in pol.index_tables)


def test_policy_json():
    pol = Policy(PolicyKind.THRESHOLD, levels=(2, 4), seed=5)
    d = json.loads(pol.to_json())
    assert d == {"kind": "Threshold", "seed": 5, "allow_idle": True, "levels": [2, 4]}
    assert pol.name == "Threshold[2, 4]"
