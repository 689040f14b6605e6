"""The single-assignment store: dataflow variables with suspension wake-up,
unification over rational trees, equality entailment, failed values and
by-need triggers.

A store belongs to exactly one process machine; all mutation happens inside
that process's serialized reduction step, so there is no locking here.
State transitions are monotone: Unbound -> (Alias | Determined | Failed),
and Determined/Failed are final.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

from .values import (
    Atom,
    Bool,
    BuiltinRef,
    Closure,
    Float,
    Int,
    Record,
    Value,
)


class StoreError(Exception):
    """Internal invariant violation (never an in-language outcome)."""


@dataclass
class Unbound:
    suspensions: set = field(default_factory=set)  # thread (stack) ids
    trigger: Optional[Closure] = None
    trigger_needed: bool = False


@dataclass
class Determined:
    value: Value


@dataclass
class Failed:
    exception: Value


@dataclass
class Alias:
    target: int


class UnificationFailure(Exception):
    """Raised on a structural mismatch; carries an in-language exception value.

    The machine converts this into a catchable raise, never a host crash.
    """

    def __init__(self, exception_var: int):
        super().__init__("unification failure")
        self.exception_var = exception_var


class RaisedFailedValue(Exception):
    """Unifying against (or waiting on) a Failed variable re-raises its value."""

    def __init__(self, exception_value: Value):
        super().__init__("failed value")
        self.exception_value = exception_value


def _float_bits_equal(a: float, b: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return False
    return struct.pack("<d", a) == struct.pack("<d", b)


class WaitOutcome:
    READY = "ready"
    SUSPENDED = "suspended"
    RAISED = "raised"


class Store:
    def __init__(self):
        self.cells: dict = {}  # var id -> state
        self.next_id = 0

    # -- creation / access ---------------------------------------------------

    def new_var(self) -> int:
        vid = self.next_id
        self.next_id += 1
        self.cells[vid] = Unbound()
        return vid

    def deref(self, v: int):
        """Follow alias links to the representative, compressing the path."""
        root = v
        seen = []
        while isinstance(self.cells[root], Alias):
            seen.append(root)
            root = self.cells[root].target
        for s in seen:
            self.cells[s] = Alias(root)
        return root, self.cells[root]

    def put(self, value: Value) -> int:
        vid = self.new_var()
        self.cells[vid] = Determined(value)
        return vid

    # -- waiting --------------------------------------------------------------

    def wait(self, thread_id: int, v: int):
        """Returns (outcome, payload):
        ready -> value; suspended -> trigger closure to schedule (or None);
        raised -> stored exception value.
        """
        root, state = self.deref(v)
        if isinstance(state, Determined):
            return WaitOutcome.READY, state.value
        if isinstance(state, Failed):
            return WaitOutcome.RAISED, state.exception
        state.suspensions.add(thread_id)
        trigger = None
        if state.trigger is not None and not state.trigger_needed:
            state.trigger_needed = True
            trigger = state.trigger
        return WaitOutcome.SUSPENDED, trigger

    def drop_suspension(self, thread_id: int, v: int):
        root, state = self.deref(v)
        if isinstance(state, Unbound):
            state.suspensions.discard(thread_id)

    # -- binding --------------------------------------------------------------

    def _bind(self, root: int, value: Value) -> set:
        state = self.cells[root]
        if not isinstance(state, Unbound):
            raise StoreError(f"bind on non-unbound v{root}")
        wake = set(state.suspensions)
        self.cells[root] = Determined(value)
        return wake

    def set_failed(self, v: int, exception: Value) -> set:
        root, state = self.deref(v)
        if not isinstance(state, Unbound):
            raise StoreError(f"set_failed on non-unbound v{root}")
        wake = set(state.suspensions)
        self.cells[root] = Failed(exception)
        return wake

    def bind_value(self, v: int, value: Value) -> set:
        """Bind v to a freshly constructed value (it cannot clash with itself)."""
        root, state = self.deref(v)
        if isinstance(state, Unbound):
            return self._bind(root, value)
        # already determined: unify against a temporary holding the value
        tmp = self.put(value)
        return self.unify(v, tmp)

    def install_by_need(self, v: int, trigger: Closure):
        root, state = self.deref(v)
        if not isinstance(state, Unbound):
            raise StoreError(f"by-need install on bound v{root}")
        if state.trigger is not None:
            raise StoreError(f"duplicate by-need trigger on v{root}")
        state.trigger = trigger

    # -- unification ----------------------------------------------------------

    def _failure_value(self, a: int, b: int) -> Value:
        inner = self.put(Record("unify", {1: self.put(Int(a)), 2: self.put(Int(b))}))
        return Record("failure", {1: inner})

    def unify(self, a: int, b: int) -> set:
        """Rational-tree unification; returns the set of woken thread ids."""
        wake = set()
        memo = set()
        self._unify(a, b, wake, memo)
        return wake

    def _unify(self, a: int, b: int, wake: set, memo: set):
        ra, sa = self.deref(a)
        rb, sb = self.deref(b)
        if ra == rb:
            return
        if isinstance(sa, Failed):
            raise RaisedFailedValue(sa.exception)
        if isinstance(sb, Failed):
            raise RaisedFailedValue(sb.exception)
        if isinstance(sa, Unbound) and isinstance(sb, Unbound):
            # lower id becomes the representative; merge suspensions, keep
            # the representative's trigger if both carry one
            rep, other = (ra, rb) if ra < rb else (rb, ra)
            rs, os = self.cells[rep], self.cells[other]
            rs.suspensions |= os.suspensions
            if rs.trigger is None:
                rs.trigger = os.trigger
                rs.trigger_needed = os.trigger_needed
            self.cells[other] = Alias(rep)
            return
        if isinstance(sa, Unbound):
            # binding an externally-triggered variable cancels its trigger
            wake |= self._bind(ra, sb.value)
            self.cells[ra] = Alias(rb)
            return
        if isinstance(sb, Unbound):
            wake |= self._bind(rb, sa.value)
            self.cells[rb] = Alias(ra)
            return
        pair = (ra, rb) if ra < rb else (rb, ra)
        if pair in memo:
            return
        memo.add(pair)
        va, vb = sa.value, sb.value
        if isinstance(va, Int) and isinstance(vb, Int) and va.n == vb.n:
            return
        if isinstance(va, Float) and isinstance(vb, Float) and _float_bits_equal(va.x, vb.x):
            return
        if isinstance(va, Bool) and isinstance(vb, Bool) and va.b == vb.b:
            return
        if isinstance(va, Atom) and isinstance(vb, Atom) and va.name == vb.name:
            return
        if isinstance(va, BuiltinRef) and isinstance(vb, BuiltinRef) and va.name == vb.name:
            return
        if isinstance(va, Closure) and isinstance(vb, Closure) and va is vb:
            return
        if (
            isinstance(va, Record)
            and isinstance(vb, Record)
            and va.label == vb.label
            and va.arity() == vb.arity()
        ):
            for feat in va.arity():
                self._unify(va.features[feat], vb.features[feat], wake, memo)
            return
        exc = self._failure_value(ra, rb)
        raise UnificationFailure(self.put(exc))

    # -- entailment -----------------------------------------------------------

    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"

    def entailed(self, a: int, b: int):
        """Three-valued equality entailment.

        Returns (result, witness) where witness is an unbound variable whose
        binding could change an unknown answer (used by == to suspend).
        """
        witness = []
        res = self._entailed(a, b, set(), witness)
        return res, (witness[0] if witness else None)

    def _entailed(self, a: int, b: int, memo: set, witness: list):
        ra, sa = self.deref(a)
        rb, sb = self.deref(b)
        if ra == rb:
            return self.TRUE
        if isinstance(sa, Unbound) or isinstance(sb, Unbound):
            if not witness:
                witness.append(ra if isinstance(sa, Unbound) else rb)
            return self.UNKNOWN
        if isinstance(sa, Failed) or isinstance(sb, Failed):
            return self.UNKNOWN
        pair = (ra, rb) if ra < rb else (rb, ra)
        if pair in memo:
            return self.TRUE
        memo.add(pair)
        va, vb = sa.value, sb.value
        if type(va) is not type(vb):
            return self.FALSE
        if isinstance(va, Int):
            return self.TRUE if va.n == vb.n else self.FALSE
        if isinstance(va, Float):
            return self.TRUE if _float_bits_equal(va.x, vb.x) else self.FALSE
        if isinstance(va, Bool):
            return self.TRUE if va.b == vb.b else self.FALSE
        if isinstance(va, Atom):
            return self.TRUE if va.name == vb.name else self.FALSE
        if isinstance(va, BuiltinRef):
            return self.TRUE if va.name == vb.name else self.FALSE
        if isinstance(va, Closure):
            return self.TRUE if va is vb else self.FALSE
        if va.label != vb.label or va.arity() != vb.arity():
            return self.FALSE
        result = self.TRUE
        for feat in va.arity():
            sub = self._entailed(va.features[feat], vb.features[feat], memo, witness)
            if sub == self.FALSE:
                return self.FALSE
            if sub == self.UNKNOWN:
                result = self.UNKNOWN
        return result

    # -- helpers --------------------------------------------------------------

    def is_ground(self, v: int, _seen=None) -> bool:
        if _seen is None:
            _seen = set()
        root, state = self.deref(v)
        if root in _seen:
            return True
        _seen.add(root)
        if isinstance(state, Unbound):
            return False
        if isinstance(state, Failed):
            return False
        value = state.value
        if isinstance(value, Record):
            return all(self.is_ground(f, _seen) for f in value.features.values())
        return True

    def put_list(self, items) -> int:
        """Build a list record spine from determined item var ids."""
        tail = self.put(Atom("nil"))
        for item in reversed(items):
            tail = self.put(Record("|", {1: item, 2: tail}))
        return tail
