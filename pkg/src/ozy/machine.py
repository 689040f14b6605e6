"""The process machine: a multiset of semantic stacks over one store.

Each stack is an in-language thread.  One reduction step pops exactly one
frame from one runnable stack and reduces it against the store.  When every
stack is suspended on an unbound variable the process is partially
terminated (quiescent, waiting on external input); injecting a new stack
partially activates it again.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from . import kernel as k
from .store import (
    Failed,
    RaisedFailedValue,
    Store,
    Unbound,
    UnificationFailure,
    WaitOutcome,
)
from .values import Atom, Bool, BuiltinRef, Closure, Float, Int, Record, Value

PARTIALLY_ACTIVE = "partially-active"
PARTIALLY_TERMINATED = "partially-terminated"
TERMINATED = "terminated"
CRASHED = "crashed"

RUNNABLE = "runnable"
SUSPENDED = "suspended"

TIME_UNITS_MS = {
    "milli": 1,
    "millis": 1,
    "second": 1000,
    "seconds": 1000,
    "minute": 60_000,
    "minutes": 60_000,
    "hour": 3_600_000,
    "hours": 3_600_000,
    "day": 86_400_000,
    "days": 86_400_000,
}

ARITH_OPS = {"+", "-", "*", "/", "div", "mod"}
CMP_OPS = {"<", ">", ">=", "=<"}

BUILTIN_NAMES = (
    sorted(ARITH_OPS)
    + sorted(CMP_OPS)
    + ["==", "\\=", "WaitTwo", "Sleep", "Wait", "$ByNeed", "$commit"]
)


class CreationError(Exception):
    pass


class InjectionError(Exception):
    pass


@dataclass
class SemanticStatement:
    stmt: k.Statement
    env: dict  # identifier -> var id


@dataclass
class SemanticStack:
    id: int
    frames: list = field(default_factory=list)  # top of stack = last element
    state: str = RUNNABLE
    waiting_on: Optional[int] = None


class NullServices:
    """Machine-facing service hooks; the standalone machine has none."""

    def register_timer(self, machine, done_var, delay_ms):
        raise RuntimeError("no timer service attached")

    def connector_call(self, machine, dotted, argvars):
        return (
            "raise",
            machine.store.put(Record("unknownModule", {1: machine.store.put(Atom(dotted))})),
        )

    def module_known(self, name) -> bool:
        return False


class Machine:
    def __init__(self, process_id, seed=0, services=None, trace=False):
        self.process_id = process_id
        self.store = Store()
        self.stacks: dict = {}
        self.next_stack_id = 0
        self.status = TERMINATED
        self.reduction_count = 0
        self.seed = seed
        self.services = services if services is not None else NullServices()
        self.trace = trace
        self.log_lines: list = []
        self.uncaught: list = []
        self.toplevel_env: dict = {}
        # stack id -> result var that must be failed if the stack dies raising
        self.obligations: dict = {}
        self.inflight_outbound: list = []

    # -- construction ---------------------------------------------------------

    def builtin_env(self) -> dict:
        env = {}
        for name in BUILTIN_NAMES:
            env[name] = self.store.put(BuiltinRef(name))
        return env

    def check_coverage(self, stmt: k.Statement, env: dict):
        missing = []
        for ident in sorted(k.free_identifiers(stmt)):
            if ident in env:
                continue
            if ident in BUILTIN_NAMES:
                continue
            if self.services.module_known(ident):
                continue
            missing.append(ident)
        return missing

    def spawn_stack(self, stmt: k.Statement, env: dict) -> SemanticStack:
        sid = self.next_stack_id
        self.next_stack_id += 1
        stack = SemanticStack(sid, [SemanticStatement(stmt, env)])
        self.stacks[sid] = stack
        return stack

    def inject(self, stmt: k.Statement, env: dict):
        if self.status == CRASHED:
            raise InjectionError("machine crashed")
        missing = self.check_coverage(stmt, env)
        if missing:
            raise InjectionError(f"unresolved identifiers: {', '.join(missing)}")
        self.spawn_stack(stmt, env)
        self.status = PARTIALLY_ACTIVE

    # -- scheduling -----------------------------------------------------------

    def runnable_ids(self):
        return sorted(s.id for s in self.stacks.values() if s.state == RUNNABLE)

    def select_runnable(self) -> Optional[int]:
        ids = self.runnable_ids()
        if not ids:
            return None
        digest = hashlib.sha256(
            f"{self.seed}:{self.reduction_count}".encode()
        ).digest()
        return ids[int.from_bytes(digest[:8], "big") % len(ids)]

    def run_slice(self, budget=1000):
        for _ in range(budget):
            sid = self.select_runnable()
            if sid is None:
                break
            self.reduce_step(sid)
        self.classify_status()
        return self.status

    def classify_status(self):
        for sid in [s.id for s in self.stacks.values() if not s.frames]:
            del self.stacks[sid]
        if self.status == CRASHED:
            return self.status
        if not self.stacks:
            self.status = TERMINATED
        elif any(s.state == RUNNABLE for s in self.stacks.values()):
            self.status = PARTIALLY_ACTIVE
        else:
            self.status = PARTIALLY_TERMINATED
        return self.status

    def frontier(self) -> set:
        """Variables the suspended stacks are waiting on (root ids)."""
        out = set()
        for s in self.stacks.values():
            if s.state == SUSPENDED and s.waiting_on is not None:
                root, _ = self.store.deref(s.waiting_on)
                out.add(root)
        return out

    def wake(self, wake_set: set):
        for tid in wake_set:
            stack = self.stacks.get(tid)
            if stack is not None and stack.state == SUSPENDED:
                stack.state = RUNNABLE
                stack.waiting_on = None
                if self.status != CRASHED:
                    self.status = PARTIALLY_ACTIVE

    # -- store interaction helpers -------------------------------------------

    def _wait(self, stack: SemanticStack, var: int):
        """Wait on a variable; schedules a by-need trigger when present."""
        outcome, payload = self.store.wait(stack.id, var)
        if outcome == WaitOutcome.SUSPENDED and payload is not None:
            self._schedule_trigger(var, payload)
        return outcome, payload

    def _schedule_trigger(self, var: int, trigger: Closure):
        root, _ = self.store.deref(var)
        fvar = self.store.put(trigger)
        self.spawn_stack(k.Apply("_F", ["_A"]), {"_F": fvar, "_A": root})

    def _suspend(self, stack: SemanticStack, frame: SemanticStatement, var: int):
        stack.frames.append(frame)
        stack.state = SUSPENDED
        root, _ = self.store.deref(var)
        stack.waiting_on = root

    def bind_external(self, var: int, value: Value) -> None:
        """Bind a variable from outside the machine (message/timer delivery)."""
        try:
            self.wake(self.store.bind_value(var, value))
        except (UnificationFailure, RaisedFailedValue):
            # conflicting external bind: leave the store as-is, note it
            self.uncaught.append("external bind conflict")
        self.classify_status()

    def fail_external(self, var: int, exception: Value) -> None:
        root, state = self.store.deref(var)
        if isinstance(state, Unbound):
            self.wake(self.store.set_failed(root, exception))
            self.classify_status()

    # -- reduction ------------------------------------------------------------

    def reduce_step(self, stack_id: int):
        stack = self.stacks[stack_id]
        assert stack.state == RUNNABLE
        frame = stack.frames.pop()
        self.reduction_count += 1
        if self.trace:
            self.log_lines.append(
                f"seq={self.reduction_count} stack={stack.id} "
                f"op={type(frame.stmt).__name__}"
            )
        try:
            outcome = self._reduce(stack, frame)
        except UnificationFailure as uf:
            outcome = self._unwind(stack, uf.exception_var)
        except RaisedFailedValue as rf:
            outcome = self._unwind(stack, self.store.put(rf.exception_value))
        if not stack.frames and stack.state == RUNNABLE:
            # a reentrant classify_status (e.g. fail_external from a connector
            # handler) may already have collected the emptied stack
            self.stacks.pop(stack.id, None)
            return "stack-done"
        return outcome

    def _reduce(self, stack: SemanticStack, frame: SemanticStatement):
        stmt, env = frame.stmt, frame.env
        store = self.store

        if isinstance(stmt, k.Skip):
            return "progressed"

        if isinstance(stmt, k.Seq):
            stack.frames.append(SemanticStatement(stmt.second, env))
            stack.frames.append(SemanticStatement(stmt.first, env))
            return "progressed"

        if isinstance(stmt, k.Local):
            env2 = dict(env)
            env2[stmt.ident] = store.new_var()
            stack.frames.append(SemanticStatement(stmt.body, env2))
            return "progressed"

        if isinstance(stmt, k.BindVarVar):
            self.wake(store.unify(env[stmt.lhs], env[stmt.rhs]))
            return "progressed"

        if isinstance(stmt, k.BindValue):
            value = self._construct(stmt.literal, env)
            self.wake(store.bind_value(env[stmt.lhs], value))
            return "progressed"

        if isinstance(stmt, k.Conditional):
            outcome, payload = self._wait(stack, env[stmt.scrutinee])
            if outcome == WaitOutcome.SUSPENDED:
                self._suspend(stack, frame, env[stmt.scrutinee])
                return "suspended"
            if outcome == WaitOutcome.RAISED:
                return self._unwind(stack, store.put(payload))
            if not isinstance(payload, Bool):
                return self._raise_record(stack, "typeError", [env[stmt.scrutinee]])
            branch = stmt.then_body if payload.b else stmt.else_body
            stack.frames.append(SemanticStatement(branch, env))
            return "progressed"

        if isinstance(stmt, k.Match):
            return self._reduce_match(stack, frame, stmt, env)

        if isinstance(stmt, k.Apply):
            return self._reduce_apply(stack, frame, stmt, env)

        if isinstance(stmt, k.SpawnThread):
            self.spawn_stack(stmt.body, env)
            return "progressed"

        if isinstance(stmt, k.TryCatch):
            stack.frames.append(SemanticStatement(k.CatchMarker(stmt.ident, stmt.handler), env))
            stack.frames.append(SemanticStatement(stmt.body, env))
            return "progressed"

        if isinstance(stmt, k.Raise):
            outcome, payload = self._wait(stack, env[stmt.ident])
            if outcome == WaitOutcome.SUSPENDED:
                self._suspend(stack, frame, env[stmt.ident])
                return "suspended"
            root, _ = store.deref(env[stmt.ident])
            return self._unwind(stack, root)

        if isinstance(stmt, k.CatchMarker):
            # body completed without raising; discard the handler
            return "progressed"

        if isinstance(stmt, k.WaitVar):
            outcome, payload = self._wait(stack, env[stmt.ident])
            if outcome == WaitOutcome.SUSPENDED:
                self._suspend(stack, frame, env[stmt.ident])
                return "suspended"
            if outcome == WaitOutcome.RAISED:
                return self._unwind(stack, store.put(payload))
            return "progressed"

        raise TypeError(f"unreducible statement: {stmt!r}")

    # -- statement helpers ----------------------------------------------------

    def _construct(self, lit: k.ValueLiteral, env: dict) -> Value:
        if isinstance(lit, k.NumberLit):
            return Float(lit.value) if isinstance(lit.value, float) else Int(lit.value)
        if isinstance(lit, k.BoolLit):
            return Bool(lit.value)
        if isinstance(lit, k.AtomLit):
            return Atom(lit.name)
        if isinstance(lit, k.RecordLit):
            return Record(lit.label, {f: env[i] for f, i in lit.features.items()})
        if isinstance(lit, k.ProcLit):
            captured = {i: env[i] for i in lit.free if i in env}
            return Closure(list(lit.params), lit.body, captured)
        raise TypeError(f"bad literal: {lit!r}")

    def _reduce_match(self, stack, frame, stmt: k.Match, env):
        store = self.store
        outcome, payload = self._wait(stack, env[stmt.scrutinee])
        if outcome == WaitOutcome.SUSPENDED:
            self._suspend(stack, frame, env[stmt.scrutinee])
            return "suspended"
        if outcome == WaitOutcome.RAISED:
            return self._unwind(stack, store.put(payload))
        root, _ = store.deref(env[stmt.scrutinee])
        for pat, body in stmt.clauses:
            res, payload2 = self._match_pattern(root, pat)
            if res == "need":
                outcome2, _ = self._wait(stack, payload2)
                if outcome2 == WaitOutcome.SUSPENDED:
                    self._suspend(stack, frame, payload2)
                    return "suspended"
                # a by-need trigger cannot bind synchronously; retry the frame
                stack.frames.append(frame)
                return "progressed"
            if res == "match":
                env2 = dict(env)
                env2.update(payload2)
                stack.frames.append(SemanticStatement(body, env2))
                return "progressed"
        if stmt.else_body is not None:
            stack.frames.append(SemanticStatement(stmt.else_body, env))
            return "progressed"
        return self._raise_record(stack, "noMatch", [root])

    def _match_pattern(self, var: int, pat: k.Pattern):
        """Returns ('match', bindings) | ('nomatch', None) | ('need', var)."""
        store = self.store
        root, state = store.deref(var)
        if isinstance(pat, k.CapturePat):
            return "match", {pat.ident: root}
        if isinstance(state, Unbound):
            return "need", root
        if isinstance(state, Failed):
            raise RaisedFailedValue(state.exception)
        value = state.value
        if isinstance(pat, k.LitPat):
            ok = (
                (pat.kind == "int" and isinstance(value, Int) and value.n == pat.value)
                or (pat.kind == "float" and isinstance(value, Float) and value.x == pat.value)
                or (pat.kind == "bool" and isinstance(value, Bool) and value.b == pat.value)
                or (pat.kind == "atom" and isinstance(value, Atom) and value.name == pat.value)
            )
            return ("match", {}) if ok else ("nomatch", None)
        if isinstance(pat, k.RecordPat):
            if not isinstance(value, Record):
                return "nomatch", None
            if value.label != pat.label or value.arity() != tuple(pat.features.keys()):
                return "nomatch", None
            bindings = {}
            for feat, sub in pat.features.items():
                res, payload = self._match_pattern(value.features[feat], sub)
                if res != "match":
                    return res, payload
                bindings.update(payload)
            return "match", bindings
        raise TypeError(f"bad pattern: {pat!r}")

    def _reduce_apply(self, stack, frame, stmt: k.Apply, env):
        store = self.store
        if "." in stmt.proc:
            return self._apply_connector(stack, frame, stmt, env)
        if stmt.proc in env:
            pvar = env[stmt.proc]
            outcome, payload = self._wait(stack, pvar)
            if outcome == WaitOutcome.SUSPENDED:
                self._suspend(stack, frame, pvar)
                return "suspended"
            if outcome == WaitOutcome.RAISED:
                return self._unwind(stack, store.put(payload))
            proc = payload
            if isinstance(proc, Closure):
                if len(proc.params) != len(stmt.args):
                    return self._raise_record(stack, "arityMismatch", [pvar])
                env2 = dict(proc.env)
                for param, arg in zip(proc.params, stmt.args):
                    env2[param] = env[arg]
                stack.frames.append(SemanticStatement(proc.body, env2))
                return "progressed"
            if isinstance(proc, BuiltinRef):
                return self._apply_builtin(stack, frame, proc.name, [env[a] for a in stmt.args])
            return self._raise_record(stack, "applyNonProcedure", [pvar])
        if stmt.proc in BUILTIN_NAMES:
            return self._apply_builtin(stack, frame, stmt.proc, [env[a] for a in stmt.args])
        return self._raise_record(
            stack, "unknownProcedure", [store.put(Atom(stmt.proc))]
        )

    # -- built-ins ------------------------------------------------------------

    def _apply_builtin(self, stack, frame, name, argvars):
        action = self.call_builtin(stack, name, argvars)
        kind = action[0]
        if kind == "done":
            return "progressed"
        if kind == "suspend":
            return self._suspend_on(stack, frame, action[1])
        if kind == "push":
            for f in reversed(action[1]):
                stack.frames.append(f)
            return "progressed"
        if kind == "raise":
            return self._unwind(stack, action[1])
        raise ValueError(f"bad builtin action {action!r}")

    def call_builtin(self, stack, name, argvars):
        store = self.store
        if name in ARITH_OPS or name in CMP_OPS:
            if len(argvars) != 3:
                return self._arity_error(name)
            vals = []
            for v in argvars[:2]:
                outcome, payload = self._wait(stack, v)
                if outcome == WaitOutcome.SUSPENDED:
                    return ("suspend", v)
                if outcome == WaitOutcome.RAISED:
                    return ("raise", store.put(payload))
                vals.append(payload)
            return self._numeric_op(name, vals[0], vals[1], argvars[2])
        if name in ("==", "\\="):
            if len(argvars) != 3:
                return self._arity_error(name)
            for v in argvars[:2]:
                root, state = store.deref(v)
                if isinstance(state, Failed):
                    return ("raise", store.put(state.exception))
            res, witness = store.entailed(argvars[0], argvars[1])
            if res == store.UNKNOWN:
                return ("suspend", witness)
            truth = res == store.TRUE
            if name == "\\=":
                truth = not truth
            wake = store.bind_value(argvars[2], Bool(truth))
            self.wake(wake)
            return ("done",)
        if name == "Wait":
            if len(argvars) != 1:
                return self._arity_error(name)
            outcome, payload = self._wait(stack, argvars[0])
            if outcome == WaitOutcome.SUSPENDED:
                return ("suspend", argvars[0])
            if outcome == WaitOutcome.RAISED:
                return ("raise", store.put(payload))
            return ("done",)
        if name == "WaitTwo":
            return self._builtin_waittwo(stack, argvars)
        if name == "$commit":
            return self._builtin_commit(stack, argvars)
        if name == "Sleep":
            return self._builtin_sleep(stack, argvars)
        if name == "$ByNeed":
            if len(argvars) != 2:
                return self._arity_error(name)
            outcome, payload = self._wait(stack, argvars[0])
            if outcome == WaitOutcome.SUSPENDED:
                return ("suspend", argvars[0])
            if outcome == WaitOutcome.RAISED:
                return ("raise", store.put(payload))
            if not isinstance(payload, Closure):
                return ("raise", store.put(Record("typeError", {1: argvars[0]})))
            try:
                store.install_by_need(argvars[1], payload)
            except Exception:
                return ("raise", store.put(Record("byNeedError", {1: argvars[1]})))
            return ("done",)
        return ("raise", store.put(Record("unknownBuiltin", {1: store.put(Atom(name))})))

    def _arity_error(self, name):
        return (
            "raise",
            self.store.put(Record("arityMismatch", {1: self.store.put(Atom(name))})),
        )

    def _numeric_op(self, name, a, b, result_var):
        store = self.store
        if not isinstance(a, (Int, Float)) or not isinstance(b, (Int, Float)):
            return ("raise", store.put(Record("typeError", {1: store.put(Atom(name))})))
        x = a.n if isinstance(a, Int) else a.x
        y = b.n if isinstance(b, Int) else b.x
        both_int = isinstance(a, Int) and isinstance(b, Int)
        try:
            if name == "+":
                r = x + y
            elif name == "-":
                r = x - y
            elif name == "*":
                r = x * y
            elif name == "/":
                r = x / y
                both_int = False
            elif name == "div":
                r = x // y
            elif name == "mod":
                r = x % y
            elif name == "<":
                r = x < y
            elif name == ">":
                r = x > y
            elif name == ">=":
                r = x >= y
            elif name == "=<":
                r = x <= y
            else:
                raise AssertionError(name)
        except ZeroDivisionError:
            return ("raise", store.put(Record("divisionByZero", {1: store.put(Atom(name))})))
        if isinstance(r, bool):
            value = Bool(r)
        elif both_int:
            value = Int(int(r))
        else:
            value = Float(float(r))
        self.wake(store.bind_value(result_var, value))
        return ("done",)

    def _builtin_waittwo(self, stack, argvars):
        store = self.store
        if len(argvars) != 3:
            return self._arity_error("WaitTwo")
        a, b, r = argvars
        ra, sa = store.deref(a)
        rb, sb = store.deref(b)
        # committed tie-break: the first variable wins when both are bound
        if not isinstance(sa, Unbound):
            self.wake(store.bind_value(r, Int(1)))
            return ("done",)
        if not isinstance(sb, Unbound):
            self.wake(store.bind_value(r, Int(2)))
            return ("done",)
        for watch, n in ((ra, 1), (rb, 2)):
            kvar = store.put(Int(n))
            self.spawn_stack(
                k.Apply("$commit", ["_W", "_R", "_K"]),
                {"_W": watch, "_R": r, "_K": kvar},
            )
        return ("done",)

    def _builtin_commit(self, stack, argvars):
        """Internal half of WaitTwo: wait on _W, then bind _R if still unbound.

        A failed watch variable counts as bound (failure selects the branch).
        """
        store = self.store
        watch, r, kvar = argvars
        root, state = store.deref(watch)
        if isinstance(state, Unbound):
            return ("suspend", watch)
        rr, rs = store.deref(r)
        if isinstance(rs, Unbound):
            _, kval = store.deref(kvar)
            self.wake(store.bind_value(rr, kval.value))
        return ("done",)

    def _builtin_sleep(self, stack, argvars):
        store = self.store
        if len(argvars) not in (2, 3):
            return self._arity_error("Sleep")
        vals = []
        for v in argvars[:2]:
            outcome, payload = self._wait(stack, v)
            if outcome == WaitOutcome.SUSPENDED:
                return ("suspend", v)
            if outcome == WaitOutcome.RAISED:
                return ("raise", store.put(payload))
            vals.append(payload)
        amount, unit = vals
        if not isinstance(amount, (Int, Float)) or not isinstance(unit, Atom):
            return ("raise", store.put(Record("typeError", {1: store.put(Atom("Sleep"))})))
        if unit.name not in TIME_UNITS_MS:
            return ("raise", store.put(Record("badTimeUnit", {1: store.put(unit)})))
        n = amount.n if isinstance(amount, Int) else amount.x
        delay_ms = int(n * TIME_UNITS_MS[unit.name])
        done = argvars[2] if len(argvars) == 3 else store.new_var()
        droot, _ = store.deref(done)
        self.services.register_timer(self, droot, delay_ms)
        return ("push", [SemanticStatement(k.WaitVar("_D"), {"_D": droot})])

    # -- connector dispatch ---------------------------------------------------

    def _apply_connector(self, stack, frame, stmt: k.Apply, env):
        store = self.store
        argvars = [env[a] for a in stmt.args]
        action = self.services.connector_call(self, stmt.proc, argvars)
        kind = action[0]
        if kind == "done":
            return "progressed"
        if kind == "suspend":
            return self._suspend_on(stack, frame, action[1])
        if kind == "raise":
            return self._unwind(stack, action[1])
        raise ValueError(f"bad connector action {action!r}")

    def _suspend_on(self, stack, frame, var):
        """Suspend on var, registering the store suspension; if var got bound
        in the meantime the frame is simply retried."""
        outcome, _ = self._wait(stack, var)
        if outcome == WaitOutcome.SUSPENDED:
            self._suspend(stack, frame, var)
            return "suspended"
        stack.frames.append(frame)
        return "progressed"

    def first_unbound(self, var: int, _seen=None):
        """First unbound variable reachable from var, or None if ground."""
        if _seen is None:
            _seen = set()
        root, state = self.store.deref(var)
        if root in _seen:
            return None
        _seen.add(root)
        if isinstance(state, Unbound):
            return root
        if isinstance(state, Failed):
            return None
        value = state.value
        if isinstance(value, Record):
            for f in value.features.values():
                found = self.first_unbound(f, _seen)
                if found is not None:
                    return found
        return None

    # -- exceptions -----------------------------------------------------------

    def _raise_record(self, stack, label, feature_vars):
        feats = {i + 1: v for i, v in enumerate(feature_vars)}
        return self._unwind(stack, self.store.put(Record(label, feats)))

    def _unwind(self, stack: SemanticStack, exc_var: int):
        while stack.frames:
            frame = stack.frames.pop()
            if isinstance(frame.stmt, k.CatchMarker):
                env2 = dict(frame.env)
                env2[frame.stmt.ident] = exc_var
                stack.frames.append(SemanticStatement(frame.stmt.handler, env2))
                return "raised-caught"
        # uncaught: the stack dies; fail any obligated result variable
        from .store import Determined as _Det

        root, state = self.store.deref(exc_var)
        self.uncaught.append(f"stack={stack.id} uncaught exception v{root}")
        obligation = self.obligations.pop(stack.id, None)
        if obligation is not None:
            oroot, ostate = self.store.deref(obligation)
            if isinstance(ostate, Unbound):
                exc_value = state.value if isinstance(state, _Det) else Atom("unknownError")
                self.wake(self.store.set_failed(oroot, exc_value))
        return "raised-uncaught"

    # -- forking (model checking / oracles) -----------------------------------

    def fork(self) -> "Machine":
        """Deep-copy the machine state, sharing the (stateless) services."""
        import copy

        clone = Machine(self.process_id, self.seed, self.services, self.trace)
        memo = {}
        clone.store.cells = copy.deepcopy(self.store.cells, memo)
        clone.store.next_id = self.store.next_id
        clone.stacks = copy.deepcopy(self.stacks, memo)
        clone.next_stack_id = self.next_stack_id
        clone.status = self.status
        clone.reduction_count = self.reduction_count
        clone.toplevel_env = dict(self.toplevel_env)
        clone.obligations = dict(self.obligations)
        return clone


def create_process(process_id, program: k.Statement, initial_env=None, seed=0,
                   services=None, trace=False, fresh_idents=()) -> Machine:
    """Build a machine holding one runnable stack for the given program.

    initial_env maps extra identifiers to Values bound before start;
    fresh_idents get fresh unbound variables (top-level program variables).
    """
    m = Machine(process_id, seed=seed, services=services, trace=trace)
    env = m.builtin_env()
    if initial_env:
        for ident, value in initial_env.items():
            env[ident] = m.store.put(value)
    for ident in sorted(fresh_idents):
        env[ident] = m.store.new_var()
    missing = m.check_coverage(program, env)
    if missing:
        raise CreationError(f"unresolved identifiers: {', '.join(missing)}")
    m.spawn_stack(program, env)
    m.status = PARTIALLY_ACTIVE
    m.toplevel_env = env
    return m
