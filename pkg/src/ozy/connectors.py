"""Connectors: adapt between store values and external interfaces with no
semantic transformation.

Ships four kinds: local (in-container handlers, also used for stubs and the
case-study registry), httpOutbound (JSON-over-HTTP service invocation),
timers backing Sleep, and stream push for dataflow lists.  All completions
reach a machine only through its owner's serialized delivery path.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .machine import Machine
from .store import Determined, Failed, Unbound
from .values import Atom, Bool, Float, Int, Record, Value, is_cons, is_nil

LABEL_KEY = "$label"
DEFAULT_RECORD_LABEL = "r"
DEFAULT_TIMEOUT_MS = 5000


class ConversionError(Exception):
    pass


class ConnectorFailure(Exception):
    """Carries the in-language failure value (as a jsonable) for a result var."""

    def __init__(self, label, detail):
        super().__init__(f"{label}: {detail}")
        self.label = label
        self.detail = detail


# ---------------------------------------------------------------------------
# Value <-> JSON bijection


def value_to_jsonable(store, var, _path=None):
    if _path is None:
        _path = set()
    root, state = store.deref(var)
    if not isinstance(state, Determined):
        raise ConversionError(f"value not ground at v{root}")
    if root in _path:
        raise ConversionError(f"cyclic value at v{root}")
    v = state.value
    if isinstance(v, Int):
        return v.n
    if isinstance(v, Float):
        return v.x
    if isinstance(v, Bool):
        return v.b
    if isinstance(v, Atom):
        return [] if is_nil(v) else v.name
    if isinstance(v, Record):
        _path = _path | {root}
        if is_cons(v):
            items = []
            cur_root, cur_state = root, state
            while True:
                cv = cur_state.value
                if is_nil(cv):
                    break
                if not is_cons(cv):
                    raise ConversionError("improper list tail")
                items.append(value_to_jsonable(store, cv.features[1], _path))
                cur_root, cur_state = store.deref(cv.features[2])
                if not isinstance(cur_state, Determined):
                    raise ConversionError(f"value not ground at v{cur_root}")
                if cur_root in _path:
                    raise ConversionError(f"cyclic value at v{cur_root}")
                _path = _path | {cur_root}
            return items
        obj = {}
        if v.label != DEFAULT_RECORD_LABEL:
            obj[LABEL_KEY] = v.label
        for feat, fvar in v.features.items():
            obj[str(feat) if isinstance(feat, int) else feat] = value_to_jsonable(
                store, fvar, _path
            )
        return obj
    raise ConversionError(f"value {type(v).__name__} has no JSON form")


def jsonable_to_value(store, obj) -> int:
    if isinstance(obj, bool):
        return store.put(Bool(obj))
    if isinstance(obj, int):
        return store.put(Int(obj))
    if isinstance(obj, float):
        return store.put(Float(obj))
    if isinstance(obj, str):
        return store.put(Atom(obj))
    if obj is None:
        raise ConversionError("null has no value form")
    if isinstance(obj, list):
        return store.put_list([jsonable_to_value(store, item) for item in obj])
    if isinstance(obj, dict):
        label = DEFAULT_RECORD_LABEL
        feats = {}
        for key, val in obj.items():
            if not isinstance(key, str):
                raise ConversionError("non-string object key")
            if key == LABEL_KEY:
                label = val
                continue
            feat = int(key) if key.isdigit() else key
            feats[feat] = jsonable_to_value(store, val)
        return store.put(Record(label, feats))
    raise ConversionError(f"unsupported JSON node {type(obj).__name__}")


def value_to_json(store, var) -> str:
    return json.dumps(value_to_jsonable(store, var), sort_keys=True, separators=(",", ":"))


def json_to_value(store, text: str) -> int:
    def no_dupes(pairs):
        keys = [k for k, _ in pairs]
        if len(set(keys)) != len(keys):
            raise ConversionError("duplicate object key")
        return dict(pairs)

    try:
        obj = json.loads(text, object_pairs_hook=no_dupes)
    except json.JSONDecodeError as e:
        raise ConversionError(f"bad JSON: {e}") from e
    return jsonable_to_value(store, obj)


# ---------------------------------------------------------------------------
# Clocks and timers


class Clock:
    def now_ms(self) -> int:
        raise NotImplementedError

    @property
    def virtual(self) -> bool:
        return False


class RealClock(Clock):
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class VirtualClock(Clock):
    def __init__(self, start_ms=0):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        self._now += delta_ms
        return self._now

    @property
    def virtual(self) -> bool:
        return True


@dataclass
class TimerEntry:
    process_id: str
    var_id: int
    deadline_ms: int
    fired: bool = False


class TimerService:
    """Registers Sleep deadlines and fires them on tick.

    Firing delivers through the owner's serialized path (deliver_timer);
    the service never touches a machine directly.
    """

    def __init__(self, clock: Clock):
        self.clock = clock
        self.entries: list = []
        self._lock = threading.Lock()

    def register(self, process_id, var_id, delay_ms) -> TimerEntry:
        entry = TimerEntry(process_id, var_id, self.clock.now_ms() + delay_ms)
        with self._lock:
            self.entries.append(entry)
        return entry

    def pending_for(self, process_id) -> list:
        with self._lock:
            return [e for e in self.entries if e.process_id == process_id and not e.fired]

    def drop_for(self, process_id):
        with self._lock:
            self.entries = [e for e in self.entries if e.process_id != process_id]

    def restore(self, process_id, pairs):
        """Re-arm (var_id, deadline) pairs; past deadlines fire on next tick."""
        with self._lock:
            for var_id, deadline in pairs:
                self.entries.append(TimerEntry(process_id, var_id, deadline))

    def due(self, now_ms=None) -> list:
        now = self.clock.now_ms() if now_ms is None else now_ms
        fired = []
        with self._lock:
            for e in self.entries:
                if not e.fired and e.deadline_ms <= now:
                    e.fired = True
                    fired.append(e)
            self.entries = [e for e in self.entries if not e.fired]
        return fired


# ---------------------------------------------------------------------------
# Connector specs


@dataclass
class ConnectorSpec:
    name: str
    kind: str  # httpOutbound | local | timer | stream
    endpoint: str = ""
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    idempotent_ops: tuple = ()
    options: dict = field(default_factory=dict)


class LocalConnector:
    """A named bundle of in-container operations.

    Each op is registered with has_result: when true, the final argument of
    an invocation is the result variable and the handler's return value is
    bound to it.
    """

    def __init__(self, name):
        self.name = name
        self.ops: dict = {}

    def op(self, opname, handler: Callable, has_result=True):
        self.ops[opname] = (handler, has_result)
        return self


class OutboundHttpConnector:
    def __init__(self, spec: ConnectorSpec):
        self.name = spec.name
        self.spec = spec


# ---------------------------------------------------------------------------
# Machine-facing services


class CallContext:
    """Handed to local connector handlers."""

    def __init__(self, machine: Machine, services: "MachineServices"):
        self.machine = machine
        self.services = services
        self.process_id = machine.process_id


class MachineServices:
    """Implements the machine's timer/connector hooks for one owner.

    The owner provides `deliver_timer(pid, var_id)` and
    `deliver_outbound(pid, var_id, ok, payload)` callbacks that route
    completions back through the process's serialized path.
    """

    def __init__(self, clock: Clock, timers: TimerService, connectors=None,
                 owner=None):
        self.clock = clock
        self.timers = timers
        self.connectors = dict(connectors or {})
        self.owner = owner
        self._http_counter = 0

    def module_known(self, name) -> bool:
        return name in self.connectors

    def register_timer(self, machine: Machine, done_var, delay_ms):
        self.timers.register(machine.process_id, done_var, delay_ms)

    # -- dispatch -------------------------------------------------------------

    def connector_call(self, machine: Machine, dotted: str, argvars):
        store = machine.store
        base, op = dotted.split(".", 1)
        conn = self.connectors.get(base)
        if conn is None:
            return ("raise", store.put(Record("unknownModule", {1: store.put(Atom(base))})))
        if isinstance(conn, LocalConnector):
            if op not in conn.ops:
                return ("raise", store.put(Record("unknownOperation", {1: store.put(Atom(dotted))})))
            handler, has_result = conn.ops[op]
            return self._call_local(machine, dotted, handler, has_result, argvars)
        if isinstance(conn, OutboundHttpConnector):
            return self._call_http(machine, conn, op, argvars)
        raw = getattr(conn, "raw_call", None)
        if raw is not None:
            # raw connectors see variables, not values (e.g. correlation
            # registration must accept unbound features)
            return raw(machine, self, op, argvars)
        return ("raise", store.put(Record("unknownModule", {1: store.put(Atom(base))})))

    def _ground_inputs(self, machine, argvars, has_result):
        """Waits (by suspension) until inputs are ground; returns jsonables."""
        store = machine.store
        inputs = argvars[:-1] if has_result else argvars
        for v in inputs:
            root, state = store.deref(v)
            if isinstance(state, Failed):
                raise _Reraise(store.put(state.exception))
            fu = machine.first_unbound(v)
            if fu is not None:
                raise _Suspend(fu)
        return [value_to_jsonable(store, v) for v in inputs]

    def _call_local(self, machine, dotted, handler, has_result, argvars):
        store = machine.store
        if has_result and not argvars:
            return ("raise", store.put(Record("arityMismatch", {1: store.put(Atom(dotted))})))
        try:
            args = self._ground_inputs(machine, argvars, has_result)
        except _Suspend as s:
            return ("suspend", s.var)
        except _Reraise as r:
            return ("raise", r.var)
        ctx = CallContext(machine, self)
        try:
            result = handler(ctx, *args)
        except ConnectorFailure as cf:
            failure = Record(
                "connectorError",
                {
                    1: store.put(Atom(str(cf.label))),
                    2: jsonable_to_value(store, cf.detail),
                },
            )
            if has_result:
                machine.fail_external(argvars[-1], failure)
                return ("done",)
            return ("raise", store.put(failure))
        if has_result:
            rvar = jsonable_to_value(store, result)
            machine.wake(store.unify(argvars[-1], rvar))
        return ("done",)

    def _call_http(self, machine, conn: OutboundHttpConnector, op, argvars):
        store = machine.store
        # outbound HTTP invocations always carry a result variable
        if not argvars:
            return ("raise", store.put(Record("arityMismatch", {1: store.put(Atom(op))})))
        try:
            args = self._ground_inputs(machine, argvars, has_result=True)
        except _Suspend as s:
            return ("suspend", s.var)
        except _Reraise as r:
            return ("raise", r.var)
        result_var, _ = store.deref(argvars[-1])
        self._http_counter += 1
        request = {
            "id": f"{machine.process_id}-out-{self._http_counter}",
            "connector": conn.name,
            "operation": op,
            "args": args,
            "result_var": result_var,
            "idempotent": op in conn.spec.idempotent_ops,
        }
        machine.inflight_outbound.append(request)
        self.issue_outbound(machine.process_id, conn.spec, request)
        return ("done",)

    def issue_outbound(self, process_id, spec: ConnectorSpec, request):
        """Fire the HTTP request on a worker thread; deliver via the owner."""

        def work():
            ok, payload = _post_json(
                f"{spec.endpoint.rstrip('/')}/{request['operation']}",
                {"args": request["args"]},
                spec.timeout_ms,
            )
            owner = self.owner
            if owner is not None:
                owner.deliver_outbound(process_id, request, ok, payload)

        threading.Thread(target=work, daemon=True).start()

    def reissue_or_fail(self, machine: Machine, spec_lookup):
        """Handle in-flight outbound requests recorded in a restored snapshot."""
        still = []
        for request in machine.inflight_outbound:
            spec = spec_lookup(request["connector"])
            if request.get("idempotent") and spec is not None:
                still.append(request)
                self.issue_outbound(machine.process_id, spec, request)
            else:
                machine.fail_external(
                    request["result_var"],
                    Record(
                        "connectorError",
                        {
                            1: machine.store.put(Atom("lostInFlight")),
                            2: machine.store.put(Atom(request["operation"])),
                        },
                    ),
                )
        machine.inflight_outbound = still


class _Suspend(Exception):
    def __init__(self, var):
        self.var = var


class _Reraise(Exception):
    def __init__(self, var):
        self.var = var


def _post_json(url, body, timeout_ms):
    import httpx

    try:
        resp = httpx.post(url, json=body, timeout=timeout_ms / 1000.0)
    except Exception as e:
        return False, {"status": 0, "reason": str(e)}
    if resp.status_code // 100 != 2:
        return False, {"status": resp.status_code, "reason": resp.text[:200]}
    try:
        return True, resp.json()
    except Exception as e:
        return False, {"status": resp.status_code, "reason": f"bad body: {e}"}


# ---------------------------------------------------------------------------
# Stream subscriptions


@dataclass
class StreamSubscription:
    subscription_id: str
    process_id: str
    spine_var: int  # current unbound tail (or the initial spine head)
    ended: bool = False


class StreamManager:
    """Watches list spines; pushes one event per cons cell, in order."""

    def __init__(self):
        self.subs: dict = {}
        self.sinks: dict = {}  # subscription id -> list of queue.Queue
        self.events: dict = {}  # subscription id -> emitted event log

    def subscribe(self, subscription_id, process_id, spine_var):
        self.subs[subscription_id] = StreamSubscription(
            subscription_id, process_id, spine_var
        )
        self.sinks.setdefault(subscription_id, [])
        self.events.setdefault(subscription_id, [])
        return self.subs[subscription_id]

    def attach_sink(self, subscription_id, queue_obj, replay=True):
        self.sinks.setdefault(subscription_id, []).append(queue_obj)
        if replay:
            for ev in getattr(self, "events", {}).get(subscription_id, []):
                queue_obj.put(ev)

    def _emit(self, sub, event):
        self.events.setdefault(sub.subscription_id, []).append(event)
        for q in self.sinks.get(sub.subscription_id, []):
            q.put(event)

    def check(self, machine: Machine):
        """Advance subscriptions of this process past any newly bound cells."""
        for sub in list(self.subs.values()):
            if sub.ended or sub.process_id != machine.process_id:
                continue
            store = machine.store
            while True:
                root, state = store.deref(sub.spine_var)
                if not isinstance(state, Determined):
                    break
                v = state.value
                if is_nil(v):
                    sub.ended = True
                    self._emit(sub, ("end", None))
                    break
                if not is_cons(v):
                    sub.ended = True
                    self._emit(sub, ("end", None))
                    break
                if machine.first_unbound(v.features[1]) is not None:
                    break  # head not ground yet
                self._emit(sub, ("data", value_to_jsonable(store, v.features[1])))
                sub.spine_var = v.features[2]


# ---------------------------------------------------------------------------
# Built-in local connector factories (config-declarable)


def make_registry_connector(data: dict) -> LocalConnector:
    """Case-study service registry backed by a configuration map.

    data: {"queries": {product: supplierId},
           "suppliers": {supplierId: [loc1, loc2]},
           "bankLoc": loc}
    """
    conn = LocalConnector("Reg")

    def get_id_by_query(ctx, product):
        sid = data.get("queries", {}).get(product)
        if sid is None:
            raise ConnectorFailure("notFound", product)
        return sid

    def get_data(ctx, supplier_id):
        locs = data.get("suppliers", {}).get(supplier_id)
        if locs is None:
            raise ConnectorFailure("notFound", supplier_id)
        return {LABEL_KEY: "#", "1": locs[0], "2": locs[1]}

    def bank_loc(ctx):
        return data.get("bankLoc", "socket://bank")

    conn.op("getIdByQuery", get_id_by_query)
    conn.op("getData", get_data)
    conn.op("bankLoc", bank_loc)
    return conn


def make_tank_connector(levels_file: str) -> LocalConnector:
    """Water-tank sampling: comma-delimited `timestamp,level` lines,
    last line wins; change detection is relative to the last pushed level."""
    conn = LocalConnector("Tank")
    last_pushed: dict = {}

    def get_water_level(ctx, tank_id):
        last = None
        try:
            with open(levels_file) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    _, _, level = line.partition(",")
                    last = level.strip()
        except OSError as e:
            raise ConnectorFailure("ioError", str(e))
        if last is None:
            raise ConnectorFailure("noData", tank_id)
        return float(last) if "." in last else int(last)

    def water_level_changed(ctx, level, threshold):
        key = ctx.process_id
        last = last_pushed.get(key, 0)
        if last == 0:
            changed = level != 0
        else:
            changed = abs(level - last) / abs(last) > threshold
        if changed:
            last_pushed[key] = level
        return changed

    conn.op("getWaterLevel", get_water_level)
    conn.op("waterLevelChanged", water_level_changed)
    return conn
