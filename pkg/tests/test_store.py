"""Single-assignment store: unification, entailment, failed values, by-need.

Property tests use explicit term graphs so a structural oracle independent
of the store implementation can predict outcomes.
"""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import build_term, graphs_bisimilar, random_term_graph
from ozy.store import (
    Alias,
    Determined,
    Failed,
    RaisedFailedValue,
    Store,
    Unbound,
    UnificationFailure,
    WaitOutcome,
)
from ozy.values import Atom, Closure, Float, Int, Record

graph_seeds = st.integers(min_value=0, max_value=10**9)


def try_unify(store, a, b):
    try:
        store.unify(a, b)
        return True
    except (UnificationFailure, RaisedFailedValue):
        return False


@settings(max_examples=200, deadline=None)
@given(graph_seeds, graph_seeds)
def test_unification_matches_bisimulation_oracle(s1, s2):
    rng1, rng2 = random.Random(s1), random.Random(s2)
    g1, g2 = random_term_graph(rng1), random_term_graph(rng2)
    store = Store()
    a, b = build_term(store, g1), build_term(store, g2)
    assert try_unify(store, a, b) == graphs_bisimilar(g1, 0, g2, 0)


@settings(max_examples=200, deadline=None)
@given(graph_seeds, graph_seeds)
def test_unification_symmetry(s1, s2):
    g1 = random_term_graph(random.Random(s1))
    g2 = random_term_graph(random.Random(s2))
    sa, sb = Store(), Store()
    assert try_unify(sa, build_term(sa, g1), build_term(sa, g2)) == try_unify(
        sb, build_term(sb, g2), build_term(sb, g1)
    )


@settings(max_examples=200, deadline=None)
@given(graph_seeds)
def test_unification_idempotent(seed):
    g = random_term_graph(random.Random(seed))
    store = Store()
    a, b = build_term(store, g), build_term(store, g)
    assert try_unify(store, a, b)
    # a second unification of the same pair succeeds and wakes nobody
    assert store.unify(a, b) == set()
    assert store.entailed(a, b)[0] == Store.TRUE


@settings(max_examples=200, deadline=None)
@given(graph_seeds, graph_seeds)
def test_entailment_agrees_with_oracle_on_ground_terms(s1, s2):
    g1 = random_term_graph(random.Random(s1))
    g2 = random_term_graph(random.Random(s2))
    store = Store()
    a, b = build_term(store, g1), build_term(store, g2)
    res, _w = store.entailed(a, b)
    assert res != Store.UNKNOWN  # both terms are ground
    assert (res == Store.TRUE) == graphs_bisimilar(g1, 0, g2, 0)


@settings(max_examples=200, deadline=None)
@given(graph_seeds)
def test_state_transitions_monotone(seed):
    rng = random.Random(seed)
    store = Store()
    v = store.new_var()
    assert isinstance(store.cells[v], Unbound)
    g = random_term_graph(rng, max_nodes=5)
    other = build_term(store, g)
    store.unify(v, other)
    root, state = store.deref(v)
    assert isinstance(state, Determined)
    # Determined is final: conflicting binds raise, state object unchanged
    fresh = store.put(Atom("definitely-not-in-graphs"))
    before = store.cells[root]
    if not try_unify(store, v, fresh):
        assert store.cells[root] is before


def test_unbound_unbound_aliases_to_lower_id():
    store = Store()
    a, b = store.new_var(), store.new_var()
    store.unify(b, a)
    assert isinstance(store.cells[max(a, b)], Alias)
    root, state = store.deref(b)
    assert root == min(a, b) and isinstance(state, Unbound)


def test_cyclic_unification_terminates_and_entails():
    store = Store()
    # x = r(x), y = r(r(y)) — equal as rational trees
    x, y, y2 = store.new_var(), store.new_var(), store.new_var()
    store.cells[x] = Determined(Record("r", {1: x}))
    store.cells[y] = Determined(Record("r", {1: y2}))
    store.cells[y2] = Determined(Record("r", {1: y}))
    store.unify(x, y)
    assert store.entailed(x, y)[0] == Store.TRUE


@pytest.mark.parametrize("n", [1, 5, 25])
def test_failed_value_propagates_to_all_waiters(n):
    store = Store()
    v = store.new_var()
    for tid in range(n):
        outcome, _ = store.wait(tid, v)
        assert outcome == WaitOutcome.SUSPENDED
    woken = store.set_failed(v, Record("failure", {1: store.put(Atom("boom"))}))
    assert woken == set(range(n))
    for tid in range(n):
        outcome, exc = store.wait(tid, v)
        assert outcome == WaitOutcome.RAISED
        assert exc.label == "failure"


def test_unifying_against_failed_reraises():
    store = Store()
    v = store.new_var()
    store.set_failed(v, Atom("boom"))
    with pytest.raises(RaisedFailedValue):
        store.unify(v, store.put(Int(1)))


def test_by_need_trigger_returned_at_most_once():
    store = Store()
    v = store.new_var()
    trig = Closure(["R"], None, {})
    store.install_by_need(v, trig)
    out1, t1 = store.wait(1, v)
    out2, t2 = store.wait(2, v)
    assert (out1, out2) == (WaitOutcome.SUSPENDED, WaitOutcome.SUSPENDED)
    assert t1 is trig and t2 is None


def test_binding_cancels_pending_trigger_semantics():
    store = Store()
    v = store.new_var()
    store.install_by_need(v, Closure(["R"], None, {}))
    store.unify(v, store.put(Int(3)))
    _, state = store.deref(v)
    assert isinstance(state, Determined) and state.value == Int(3)


def test_float_nan_never_unifies():
    store = Store()
    a = store.put(Float(float("nan")))
    b = store.put(Float(float("nan")))
    assert not try_unify(store, a, b)


def test_wake_set_returned_on_bind():
    store = Store()
    v = store.new_var()
    store.wait(7, v)
    store.wait(9, v)
    assert store.bind_value(v, Int(1)) == {7, 9}


def test_deref_compresses_alias_chains():
    store = Store()
    vs = [store.new_var() for _ in range(5)]
    for a, b in zip(vs, vs[1:]):
        store.unify(a, b)
    root, _ = store.deref(vs[-1])
    assert all(store.cells[v].target == root for v in vs if v != root)
