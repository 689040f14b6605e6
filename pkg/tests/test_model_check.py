"""Exhaustive interleaving exploration of small programs via machine.fork,
checked against a brute-force oracle over an independent abstract model.

Every schedule up to the depth bound must reach quiescence, the set of
observable outcomes must equal the oracle's, and no reachable state may
contain a lost wakeup (a stack suspended on an already-bound variable)."""

import pytest

from helpers import toplevel_snapshot
from ozy.lang import load_program
from ozy.machine import SUSPENDED, create_process
from ozy.persistence import snapshot
from ozy.store import Unbound

DEPTH_BOUND = 12


def explore(source, observe, max_states=200_000):
    """DFS over every scheduler choice; returns the set of outcomes at
    quiescent states (observe(machine) must be hashable)."""
    prog = load_program(source, "mc")
    root = create_process("mc", prog.statement, fresh_idents=prog.toplevel)
    outcomes = set()
    seen = set()
    stack = [(root, 0)]
    states = 0
    while stack:
        m, depth = stack.pop()
        states += 1
        assert states <= max_states, "state space larger than expected"
        assert_no_lost_wakeup(m)
        key = state_key(m)
        if key in seen:
            continue
        seen.add(key)
        ids = m.runnable_ids()
        if not ids:
            outcomes.add(observe(m))
            continue
        assert depth < DEPTH_BOUND, (
            f"schedule exceeded {DEPTH_BOUND} reductions without quiescing"
        )
        for sid in ids:
            child = m.fork()
            child.reduce_step(sid)
            child.classify_status()
            stack.append((child, depth + 1))
    return outcomes


def state_key(m):
    body = dict(snapshot(m, allow_active=True).body)
    body.pop("reductionCount", None)
    return repr(sorted(body.items()))


def assert_no_lost_wakeup(m):
    for s in m.stacks.values():
        if s.state == SUSPENDED:
            _, state = m.store.deref(s.waiting_on)
            assert isinstance(state, Unbound), (
                f"stack {s.id} suspended on a bound variable"
            )


# ---------------------------------------------------------------------------
# oracle: an abstract model of tiny dataflow programs. Threads are guarded
# step lists over a variable valuation; brute-force DFS enumerates every
# interleaving of the abstract steps.


def oracle_outcomes(threads, observe_vars):
    """threads: list of step lists; a step is a function(env, spawn) -> bool
    (False = blocked, retry later). Returns set of final valuations."""
    outcomes = set()

    def go(pending, env):
        # pending: list of (thread_steps, index)
        enabled = []
        for i, (steps, idx) in enumerate(pending):
            if idx < len(steps):
                enabled.append(i)
        live = [(s, i) for (s, i) in pending if i < len(s)]
        if not live:
            outcomes.add(tuple(env.get(v) for v in observe_vars))
            return
        progressed = False
        for i in enabled:
            steps, idx = pending[i]
            env2 = dict(env)
            spawned = []
            ok = steps[idx](env2, spawned.append)
            if not ok:
                continue
            progressed = True
            nxt = list(pending)
            nxt[i] = (steps, idx + 1)
            nxt.extend((s, 0) for s in spawned)
            go(nxt, env2)
        if not progressed:
            # all live threads blocked: quiescent with unbound observables
            outcomes.add(tuple(env.get(v) for v in observe_vars))

    go([(t, 0) for t in threads], {})
    return outcomes


def bind(var, value):
    def step(env, _spawn):
        env[var] = value
        return True

    return step


def add(dst, a, b):
    def step(env, _spawn):
        if a not in env or b not in env:
            return False
        env[dst] = env[a] + env[b]
        return True

    return step


# ---------------------------------------------------------------------------


def test_confluent_dataflow_matches_oracle():
    source = """
thread X = 1 end
thread Y = X + 2 end
thread Z = X + Y end
"""
    machine_outcomes = explore(
        source, lambda m: tuple(sorted(toplevel_snapshot(m, ["X", "Y", "Z"]).items()))
    )
    expected = oracle_outcomes(
        [[bind("X", 1)], [bind("two", 2), add("Y", "X", "two")],
         [add("Z", "X", "Y")]],
        ["X", "Y", "Z"],
    )
    assert expected == {(1, 3, 4)}  # oracle itself is confluent
    assert machine_outcomes == {(("X", 1), ("Y", 3), ("Z", 4))}


def test_waittwo_race_matches_oracle():
    source = """
thread A = 1 end
thread B = 2 end
R = {WaitTwo A B}
"""

    def waittwo_main(env, spawn):
        # mirror of the committed-choice builtin: immediate check, else two
        # single-shot committers
        if "A" in env:
            env.setdefault("R", 1)
        elif "B" in env:
            env.setdefault("R", 2)
        else:
            spawn([commit("A", 1)])
            spawn([commit("B", 2)])
        return True

    def commit(watch, n):
        def step(env, _spawn):
            if watch not in env:
                return False
            env.setdefault("R", n)
            return True

        return step

    expected = oracle_outcomes(
        [[bind("A", 1)], [bind("B", 2)], [waittwo_main]], ["R"]
    )
    assert expected == {(1,), (2,)}  # genuinely racy
    machine_outcomes = explore(
        source, lambda m: toplevel_snapshot(m, ["R"])["R"]
    )
    assert machine_outcomes == {1, 2}


def test_blocked_consumer_quiesces_with_unbound_output():
    source = """
thread W = V + 1 end
thread U = 3 end
"""
    expected = oracle_outcomes(
        [[add("W", "V", "one")], [bind("U", 3)]], ["W", "U"]
    )
    assert expected == {(None, 3)}
    machine_outcomes = explore(
        source, lambda m: tuple(sorted(toplevel_snapshot(m, ["W", "U"]).items()))
    )
    assert machine_outcomes == {(("U", 3), ("W", "<unbound>"))}
