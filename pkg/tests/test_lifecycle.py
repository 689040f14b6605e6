"""Randomized lifecycle trials: a run that is snapshotted and restored at
every quiescent point must be observationally identical to an uninterrupted
run receiving the same messages. Also checks the activation guarantee and
quiescence soundness along every trial."""

import random

import pytest

from helpers import random_lifecycle_program, run_to_quiescence, toplevel_snapshot
from ozy.lang import load_program
from ozy.machine import PARTIALLY_ACTIVE, create_process
from ozy.persistence import restore, snapshot
from ozy.values import Int

N_TRIALS = 50


def fresh_machine(source, seed):
    prog = load_program(source, "trial")
    return create_process("trial", prog.statement, fresh_idents=prog.toplevel, seed=seed)


def deliver(machine, name, value):
    machine.bind_external(machine.toplevel_env[name], Int(value))


def assert_quiescent_sound(machine):
    before = machine.reduction_count
    machine.run_slice(20)
    assert machine.reduction_count == before, "reductions possible at quiescence"


def run_uninterrupted(source, script, seed):
    m = fresh_machine(source, seed)
    run_to_quiescence(m)
    assert_quiescent_sound(m)
    for name, value in script:
        deliver(m, name, value)
        run_to_quiescence(m)
        assert_quiescent_sound(m)
    return m


def run_with_restarts(source, script, seed):
    m = fresh_machine(source, seed)
    run_to_quiescence(m)
    m = restore(snapshot(m))
    for name, value in script:
        before = m.reduction_count
        deliver(m, name, value)
        if m.status == PARTIALLY_ACTIVE:
            # activation guarantee: a delivered message that wakes anything
            # yields at least one reduction immediately
            m.run_slice(1)
            assert m.reduction_count == before + 1
        run_to_quiescence(m)
        assert_quiescent_sound(m)
        m = restore(snapshot(m))
    return m


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_resume_equivalence(trial):
    rng = random.Random(1000 + trial)
    source, externals, script = random_lifecycle_program(rng)
    names = sorted(
        set(externals)
        | set(load_program(source, "t").toplevel)
    )
    seed = rng.randrange(1 << 30)
    plain = run_uninterrupted(source, script, seed)
    restarted = run_with_restarts(source, script, seed)
    assert toplevel_snapshot(plain, names) == toplevel_snapshot(restarted, names)
    assert plain.status == restarted.status
    # every externally bound input must be visible in the final state
    for name, value in script:
        assert toplevel_snapshot(plain, [name]) == {name: value}


def test_restart_mid_stream_of_messages_is_transparent():
    # deliver half the messages, restart, deliver the rest
    rng = random.Random(4242)
    source, externals, script = random_lifecycle_program(rng)
    m = fresh_machine(source, 0)
    run_to_quiescence(m)
    half = len(script) // 2
    for name, value in script[:half]:
        deliver(m, name, value)
        run_to_quiescence(m)
    m = restore(snapshot(m))
    for name, value in script[half:]:
        deliver(m, name, value)
        run_to_quiescence(m)

    reference = run_uninterrupted(source, script, 0)
    names = sorted(load_program(source, "t").toplevel)
    assert toplevel_snapshot(m, names) == toplevel_snapshot(reference, names)
