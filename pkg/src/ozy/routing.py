"""Multi-tenant message routing: Tell/Ask envelopes flow root -> tenant ->
process, where they are correlated to a process (created, live, or restored
from snapshot) and turned into semantic stacks injected into its machine.

Concurrency contract: root routing and correlation resolution serialize on
the tenant lock; each process host serializes its own machine mutations on a
per-host lock (tenant lock is always taken first when both are needed).
Reply handles complete exactly once and are safe to complete from any thread.
"""

from __future__ import annotations

import concurrent.futures
import glob
import json
import os
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from . import kernel as k
from . import persistence
from .connectors import (
    ConversionError,
    MachineServices,
    StreamManager,
    TimerService,
    VirtualClock,
    jsonable_to_value,
    value_to_jsonable,
)
from .machine import PARTIALLY_ACTIVE, PARTIALLY_TERMINATED, TERMINATED, create_process
from .store import Determined, Failed, Unbound
from .values import Atom, Closure, Record

TOKEN_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
DEFAULT_SLICE_BUDGET = 1000
DEFAULT_ASK_TIMEOUT_MS = 10_000


class AddressError(Exception):
    pass


class RoutingError(Exception):
    pass


class UnknownTenant(RoutingError):
    pass


class DuplicateCorrelation(RoutingError):
    pass


# ---------------------------------------------------------------------------
# addresses


@dataclass(frozen=True)
class Address:
    tenant_id: str
    process_id: Optional[str] = None

    def __post_init__(self):
        if not TOKEN_RE.match(self.tenant_id):
            raise AddressError(f"bad tenant token {self.tenant_id!r}")
        if self.process_id is not None and not TOKEN_RE.match(self.process_id):
            raise AddressError(f"bad process token {self.process_id!r}")

    def render(self) -> str:
        path = f"/root/tenants/{self.tenant_id}"
        if self.process_id is not None:
            path += f"/processes/{self.process_id}"
        return path


def parse_address(path: str) -> Address:
    parts = path.strip("/").split("/")
    if len(parts) >= 3 and parts[0] == "root" and parts[1] == "tenants":
        if len(parts) == 3:
            return Address(parts[2])
        if len(parts) == 5 and parts[3] == "processes":
            return Address(parts[2], parts[4])
    raise AddressError(f"malformed address {path!r}")


# ---------------------------------------------------------------------------
# envelopes and replies


class ReplyHandle:
    """Completes exactly once with ('value', payload) or ('failure', payload)."""

    def __init__(self):
        self.future: concurrent.futures.Future = concurrent.futures.Future()
        self._lock = threading.Lock()
        self._done = False

    def complete_value(self, payload) -> bool:
        return self._complete(("value", payload))

    def complete_failure(self, payload) -> bool:
        return self._complete(("failure", payload))

    def _complete(self, outcome) -> bool:
        with self._lock:
            if self._done:
                return False
            self._done = True
        self.future.set_result(outcome)
        return True


@dataclass
class Envelope:
    mode: str  # "tell" | "ask"
    tenant_id: str
    process_id: Optional[str] = None
    correlation: Optional[dict] = None  # business attributes (jsonable map)
    program: Optional[str] = None
    procedure: Optional[str] = None
    external: Optional[str] = None
    args: Optional[list] = None
    value: object = None  # payload for external bindings
    reply: Optional[ReplyHandle] = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("tell", "ask"):
            raise RoutingError(f"bad envelope mode {self.mode!r}")
        if self.mode == "ask" and self.reply is None:
            self.reply = ReplyHandle()

    def to_jsonable(self) -> dict:
        return {
            "mode": self.mode,
            "tenantId": self.tenant_id,
            "processId": self.process_id,
            "correlation": self.correlation,
            "program": self.program,
            "procedure": self.procedure,
            "external": self.external,
            "args": self.args,
            "value": self.value,
        }


def canonical_key(name, payload) -> str:
    """Durable, comparable encoding of one business attribute."""
    return json.dumps({str(name): payload}, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# durable correlation store (append-only JSONL)


class CorrelationStore:
    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._by_key: dict = {}  # (tenant, key) -> process id
        self._counters: dict = {}  # tenant -> last allocated counter
        self._fh = None
        self._load()

    def _load(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        if os.path.exists(self.path):
            with open(self.path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        row = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn tail line after a crash
                    if row.get("t") == "corr":
                        self._by_key[(row["tenant"], row["key"])] = row["pid"]
                    elif row.get("t") == "pid":
                        self._counters[row["tenant"]] = max(
                            self._counters.get(row["tenant"], 0), row["n"]
                        )
        self._fh = open(self.path, "a")

    def _append(self, row, durable=True):
        self._fh.write(json.dumps(row, sort_keys=True) + "\n")
        self._fh.flush()
        if durable:
            os.fsync(self._fh.fileno())

    def register(self, tenant_id, key, process_id):
        with self._lock:
            existing = self._by_key.get((tenant_id, key))
            if existing is not None:
                if existing == process_id:
                    return
                raise DuplicateCorrelation(f"duplicate correlation key {key}")
            self._append({"t": "corr", "tenant": tenant_id, "key": key, "pid": process_id})
            self._by_key[(tenant_id, key)] = process_id

    def lookup(self, tenant_id, key) -> Optional[str]:
        with self._lock:
            return self._by_key.get((tenant_id, key))

    def next_counter(self, tenant_id) -> int:
        with self._lock:
            n = self._counters.get(tenant_id, 0) + 1
            self._counters[tenant_id] = n
            self._append({"t": "pid", "tenant": tenant_id, "n": n}, durable=False)
            return n

    def flush(self):
        with self._lock:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


# ---------------------------------------------------------------------------
# dead letters


class DeadLetterQueue:
    def __init__(self, directory):
        self.directory = directory
        self._lock = threading.Lock()
        self._seq = 0

    def put(self, envelope: Envelope, reason: str) -> str:
        tenant_dir = os.path.join(self.directory, envelope.tenant_id)
        os.makedirs(tenant_dir, exist_ok=True)
        with self._lock:
            self._seq += 1
            seq = self._seq
        path = os.path.join(tenant_dir, f"{int(time.time() * 1000)}-{seq}.json")
        body = envelope.to_jsonable()
        body["reason"] = reason
        with open(path, "w") as fh:
            json.dump(body, fh, sort_keys=True, indent=2)
        return path

    def list(self, tenant_id) -> list:
        tenant_dir = os.path.join(self.directory, tenant_id)
        if not os.path.isdir(tenant_dir):
            return []
        out = []
        for name in sorted(os.listdir(tenant_dir)):
            with open(os.path.join(tenant_dir, name)) as fh:
                row = json.load(fh)
            row["file"] = name
            out.append(row)
        return out


# ---------------------------------------------------------------------------
# the in-language orchestration module (Orch)


class OrchConnector:
    """`Orch.updateCSet` registers the features of a record: ground features
    become durable correlation entries; unbound features become external
    bindings (named variables later messages can bind).  `Orch.commit`
    flushes the correlation store."""

    name = "Orch"

    def raw_call(self, machine, services, op, argvars):
        store = machine.store
        owner = services.owner
        if op == "updateCSet":
            if len(argvars) != 1:
                return self._raise(store, "arityMismatch", Atom("Orch.updateCSet"))
            root, state = store.deref(argvars[0])
            if isinstance(state, Unbound):
                return ("suspend", root)
            if isinstance(state, Failed):
                return ("raise", store.put(state.exception))
            rec = state.value
            if not isinstance(rec, Record):
                return self._raise(store, "typeError", Atom("Orch.updateCSet"))
            for feat, fvar in rec.features.items():
                froot, _ = store.deref(fvar)
                if store.is_ground(froot):
                    try:
                        payload = value_to_jsonable(store, froot)
                        owner.register_correlation(str(feat), payload)
                    except (ConversionError, DuplicateCorrelation) as e:
                        return self._raise(
                            store, "correlationError", Atom(str(e)[:120])
                        )
                else:
                    owner.register_external(str(feat), froot)
            return ("done",)
        if op == "commit":
            owner.commit_flush()
            return ("done",)
        return self._raise(store, "unknownOperation", Atom(f"Orch.{op}"))

    @staticmethod
    def _raise(store, label, value):
        return ("raise", store.put(Record(label, {1: store.put(value)})))


# ---------------------------------------------------------------------------
# process hosts


@dataclass
class AskWire:
    result_var: int
    reply: ReplyHandle


class ProcessHost:
    """One live process: machine + serialized delivery path."""

    def __init__(self, tenant: "Tenant", process_id: str):
        self.tenant = tenant
        self.container = tenant.container
        self.process_id = process_id
        self.lock = threading.RLock()
        self.machine = None
        self.externals: dict = {}  # external name -> var id
        self.asks: list = []
        self.program_digest = ""
        self.idle_since_ms: Optional[int] = None
        self.services = MachineServices(
            self.container.clock,
            self.container.timers,
            tenant.connectors,
            owner=self,
        )

    # -- Orch hooks -----------------------------------------------------------

    def register_correlation(self, name, payload):
        self.container.correlations.register(
            self.tenant.tenant_id, canonical_key(name, payload), self.process_id
        )

    def register_external(self, name, var_id):
        self.externals[name] = var_id

    def commit_flush(self):
        self.container.correlations.flush()

    # -- execution ------------------------------------------------------------

    def start(self, program, seed=0):
        with self.lock:
            self.machine = create_process(
                self.process_id,
                program.statement,
                seed=seed,
                services=self.services,
                fresh_idents=program.toplevel,
            )
            self.program_digest = program.digest
            self.run_to_quiescence()

    def run_to_quiescence(self):
        with self.lock:
            m = self.machine
            if m is None:
                return None
            while m.classify_status() == PARTIALLY_ACTIVE:
                m.run_slice(self.container.slice_budget)
            self.container.streams.check(m)
            self._check_asks()
            if m.status in (PARTIALLY_TERMINATED, TERMINATED):
                if self.idle_since_ms is None:
                    self.idle_since_ms = self.container.clock.now_ms()
            else:
                self.idle_since_ms = None
            return m.status

    def _check_asks(self):
        m = self.machine
        remaining = []
        for wire in self.asks:
            root, state = m.store.deref(wire.result_var)
            if isinstance(state, Failed):
                wire.reply.complete_failure(self._render(state.exception))
            elif isinstance(state, Determined) and m.first_unbound(root) is None:
                wire.reply.complete_value(value_to_jsonable(m.store, root))
            else:
                remaining.append(wire)
        self.asks = remaining

    def _render(self, exc_value):
        var = self.machine.store.put(exc_value)
        try:
            return value_to_jsonable(self.machine.store, var)
        except ConversionError:
            return {"$label": "error", "detail": repr(exc_value)}

    # -- delivery -------------------------------------------------------------

    def apply_procedure(self, envelope: Envelope):
        with self.lock:
            m = self.machine
            store = m.store
            pvar = m.toplevel_env.get(envelope.procedure)
            proc = None
            if pvar is not None:
                _, state = store.deref(pvar)
                if isinstance(state, Determined):
                    proc = state.value
            if not isinstance(proc, Closure):
                return self._undeliverable(
                    envelope, f"unknown procedure {envelope.procedure!r}"
                )
            env = {"_P": pvar}
            idents = []
            for i, arg in enumerate(envelope.args or []):
                ident = f"_A{i}"
                try:
                    env[ident] = jsonable_to_value(store, arg)
                except ConversionError as e:
                    return self._undeliverable(envelope, f"bad argument: {e}")
                idents.append(ident)
            if envelope.mode == "ask":
                rvar = store.new_var()
                env["_R"] = rvar
                idents.append("_R")
                self.asks.append(AskWire(rvar, envelope.reply))
            m.inject(k.Apply("_P", idents), env)
            if envelope.mode == "ask":
                # fail the result if the injected stack dies uncaught
                m.obligations[m.next_stack_id - 1] = rvar
            self.run_to_quiescence()
            return self.process_id

    def bind_external_name(self, envelope: Envelope):
        with self.lock:
            var = self.externals.get(envelope.external)
            if var is None:
                return self._undeliverable(
                    envelope, f"unknown external name {envelope.external!r}"
                )
            m = self.machine
            try:
                vv = jsonable_to_value(m.store, envelope.value)
            except ConversionError as e:
                return self._undeliverable(envelope, f"bad value: {e}")
            _, state = m.store.deref(vv)
            m.bind_external(var, state.value)
            self.run_to_quiescence()
            if envelope.reply is not None:
                envelope.reply.complete_value({"bound": envelope.external})
            return self.process_id

    def deliver(self, envelope: Envelope):
        if envelope.external is not None:
            return self.bind_external_name(envelope)
        if envelope.procedure is not None:
            return self.apply_procedure(envelope)
        # creation-only envelope: nothing further to inject
        if envelope.reply is not None:
            envelope.reply.complete_value({"processId": self.process_id})
        return self.process_id

    def _undeliverable(self, envelope: Envelope, reason: str):
        if envelope.mode == "ask":
            envelope.reply.complete_failure({"$label": "undeliverable", "reason": reason})
        else:
            self.container.dead_letters.put(envelope, reason)
        return None

    # -- connector/timer completions (owner callbacks) ------------------------

    def deliver_outbound(self, process_id, request, ok, payload):
        with self.lock:
            m = self.machine
            if m is None:
                return  # passivated; the snapshot recorded the request
            m.inflight_outbound = [
                r for r in m.inflight_outbound if r["id"] != request["id"]
            ]
            if ok:
                try:
                    vv = jsonable_to_value(m.store, payload)
                except ConversionError as e:
                    m.fail_external(
                        request["result_var"],
                        Record(
                            "connectorError",
                            {
                                1: m.store.put(Atom("badBody")),
                                2: m.store.put(Atom(str(e)[:200])),
                            },
                        ),
                    )
                else:
                    _, state = m.store.deref(vv)
                    m.bind_external(request["result_var"], state.value)
            else:
                m.fail_external(
                    request["result_var"],
                    Record(
                        "connectorError",
                        {
                            1: jsonable_to_value(m.store, payload.get("status", 0)),
                            2: m.store.put(Atom(str(payload.get("reason", ""))[:200])),
                        },
                    ),
                )
            self.run_to_quiescence()

    def deliver_timer(self, var_id):
        with self.lock:
            if self.machine is None:
                return
            self.machine.bind_external(var_id, Atom("unit"))
            self.run_to_quiescence()

    # -- inspection / lifecycle ----------------------------------------------

    def status_view(self) -> dict:
        with self.lock:
            m = self.machine
            if m is None:
                return {"status": "passivated", "frontier": [], "reductions": None}
            frontier_roots = m.frontier()
            names = sorted(
                name
                for name, v in self.externals.items()
                if m.store.deref(v)[0] in frontier_roots
            )
            return {
                "status": m.status,
                "frontier": names,
                "reductions": m.reduction_count,
            }

    def passivate(self) -> Optional[str]:
        """Snapshot + evict; caller holds the tenant lock."""
        with self.lock:
            m = self.machine
            if m is None or m.classify_status() != PARTIALLY_TERMINATED:
                return None
            timers = self.container.timers
            pending = [
                (e.var_id, e.deadline_ms, self.container.clock.virtual)
                for e in timers.pending_for(self.process_id)
            ]
            snap = persistence.snapshot(
                m,
                pending_timers=pending,
                externals=self.externals,
                program_digest=self.program_digest,
            )
            path = persistence.write_snapshot(
                snap, self.tenant.snapshot_dir, self.tenant.tenant_id
            )
            timers.drop_for(self.process_id)
            self.machine = None
            return path


# ---------------------------------------------------------------------------
# tenants


class Tenant:
    def __init__(self, container: "Container", tenant_id, token="", programs=None,
                 connectors=None):
        if not TOKEN_RE.match(tenant_id):
            raise AddressError(f"bad tenant token {tenant_id!r}")
        self.container = container
        self.tenant_id = tenant_id
        self.token = token
        self.programs = dict(programs or {})  # name -> compiled Program
        self.connectors = dict(connectors or {})
        self.connectors.setdefault("Orch", OrchConnector())
        self.live: dict = {}  # process id -> ProcessHost
        self.lock = threading.RLock()
        self.snapshot_dir = os.path.join(container.data_dir, "snapshots")

    # -- process resolution ---------------------------------------------------

    def new_process_id(self) -> str:
        n = self.container.correlations.next_counter(self.tenant_id)
        return f"p-{n}-{secrets.token_hex(3)}"

    def create_process(self, program_name, seed=0) -> Optional[ProcessHost]:
        program = self.programs.get(program_name)
        if program is None:
            return None
        with self.lock:
            host = ProcessHost(self, self.new_process_id())
            self.live[host.process_id] = host
        host.start(program, seed=seed)
        return host

    def resolve(self, process_id) -> Optional[ProcessHost]:
        """Live host, or restore from the newest snapshot (lifecycle step 3)."""
        with self.lock:
            host = self.live.get(process_id)
            if host is not None and host.machine is not None:
                return host
            path = self._latest_snapshot(process_id)
            if path is None:
                return None
            return self._restore(process_id, path)

    def _latest_snapshot(self, process_id) -> Optional[str]:
        pattern = os.path.join(
            self.snapshot_dir, f"{self.tenant_id}.{process_id}.*.ozss"
        )
        best, best_count = None, -1
        for path in glob.glob(pattern):
            try:
                count = int(path.rsplit(".", 2)[-2])
            except ValueError:
                continue
            if count > best_count:
                best, best_count = path, count
        return best

    def _restore(self, process_id, path) -> ProcessHost:
        snap = persistence.read_snapshot(path)
        host = ProcessHost(self, process_id)
        host.machine = persistence.restore(snap, services=host.services)
        host.externals = persistence.restored_externals(snap)
        host.program_digest = snap.body.get("programDigest", "")
        self.container.timers.restore(
            process_id,
            [(v, d) for v, d, _virtual in persistence.restored_timers(snap)],
        )
        host.services.reissue_or_fail(host.machine, self._spec_for)
        self.live[process_id] = host
        host.idle_since_ms = self.container.clock.now_ms()
        return host

    def _spec_for(self, connector_name):
        conn = self.connectors.get(connector_name)
        return getattr(conn, "spec", None)

    # -- delivery -------------------------------------------------------------

    def deliver(self, envelope: Envelope):
        host = None
        if envelope.process_id is not None:
            host = self.resolve(envelope.process_id)
            if host is None:
                return self._undeliverable(
                    envelope, f"unknown process {envelope.process_id!r}"
                )
        elif envelope.correlation:
            for name, payload in envelope.correlation.items():
                pid = self.container.correlations.lookup(
                    self.tenant_id, canonical_key(name, payload)
                )
                if pid is not None:
                    host = self.resolve(pid)
                    break
        if host is None and envelope.program is not None:
            host = self.create_process(envelope.program, seed=envelope.seed)
            if host is None:
                return self._undeliverable(
                    envelope, f"unknown program {envelope.program!r}"
                )
            if envelope.correlation:
                for name, payload in envelope.correlation.items():
                    try:
                        host.register_correlation(name, payload)
                    except DuplicateCorrelation as e:
                        return self._undeliverable(envelope, str(e))
        if host is None:
            return self._undeliverable(envelope, "no process id, correlation match, or program")
        return host.deliver(envelope)

    def _undeliverable(self, envelope: Envelope, reason: str):
        if envelope.mode == "ask":
            envelope.reply.complete_failure({"$label": "undeliverable", "reason": reason})
        else:
            self.container.dead_letters.put(envelope, reason)
        return None

    # -- lifecycle ------------------------------------------------------------

    def passivate_idle(self, idle_ms=0) -> int:
        now = self.container.clock.now_ms()
        count = 0
        with self.lock:
            for pid, host in list(self.live.items()):
                if host.machine is None:
                    del self.live[pid]
                    continue
                if host.idle_since_ms is None or now - host.idle_since_ms < idle_ms:
                    continue
                if host.passivate() is not None:
                    del self.live[pid]
                    count += 1
        return count

    def process_list(self) -> list:
        with self.lock:
            hosts = list(self.live.items())
        rows = []
        for pid, host in sorted(hosts):
            view = host.status_view()
            view["processId"] = pid
            rows.append(view)
        seen = {pid for pid, _ in hosts}
        for path in sorted(glob.glob(os.path.join(self.snapshot_dir, f"{self.tenant_id}.*.ozss"))):
            pid = os.path.basename(path).split(".")[1]
            if pid not in seen:
                seen.add(pid)
                rows.append(
                    {"processId": pid, "status": "passivated", "frontier": [], "reductions": None}
                )
        return rows


# ---------------------------------------------------------------------------
# container (the root actor)


class Container:
    def __init__(self, data_dir, clock=None, slice_budget=DEFAULT_SLICE_BUDGET):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self.clock = clock if clock is not None else VirtualClock()
        self.timers = TimerService(self.clock)
        self.streams = StreamManager()
        self.correlations = CorrelationStore(os.path.join(data_dir, "correlations.jsonl"))
        self.dead_letters = DeadLetterQueue(os.path.join(data_dir, "deadletters"))
        self.slice_budget = slice_budget
        self.tenants: dict = {}

    def add_tenant(self, tenant_id, token="", programs=None, connectors=None) -> Tenant:
        tenant = Tenant(self, tenant_id, token, programs, connectors)
        self.tenants[tenant_id] = tenant
        return tenant

    # -- root routing ---------------------------------------------------------

    def route(self, envelope: Envelope):
        tenant = self.tenants.get(envelope.tenant_id)
        if tenant is None:
            if envelope.mode == "ask":
                envelope.reply.complete_failure(
                    {"$label": "unknownTenant", "tenant": envelope.tenant_id}
                )
                return None
            raise UnknownTenant(f"unknown tenant {envelope.tenant_id!r}")
        return tenant.deliver(envelope)

    def tell(self, envelope: Envelope):
        return self.route(envelope)

    def ask(self, envelope: Envelope, timeout_ms=DEFAULT_ASK_TIMEOUT_MS):
        """Route and wait; resolves exactly once with value/failure/timeout."""
        assert envelope.mode == "ask"
        pid = self.route(envelope)
        try:
            kind, payload = envelope.reply.future.result(timeout=timeout_ms / 1000.0)
        except concurrent.futures.TimeoutError:
            envelope.reply.complete_failure({"$label": "askTimeout", "ms": timeout_ms})
            kind, payload = envelope.reply.future.result()
        return kind, payload, pid

    # -- timers ---------------------------------------------------------------

    def tick(self):
        for entry in self.timers.due():
            host = self.find_host(entry.process_id)
            if host is None:
                continue  # process gone (terminated): drop
            host.deliver_timer(entry.var_id)

    def advance(self, delta_ms):
        self.clock.advance(delta_ms)
        self.tick()

    def find_host(self, process_id) -> Optional[ProcessHost]:
        for tenant in self.tenants.values():
            with tenant.lock:
                if process_id in tenant.live:
                    return tenant.resolve(process_id)
        # not live anywhere: try restoring from any tenant's snapshots
        for tenant in self.tenants.values():
            host = tenant.resolve(process_id)
            if host is not None:
                return host
        return None

    # -- streams --------------------------------------------------------------

    def subscribe_stream(self, tenant_id, process_id, external_name) -> Optional[str]:
        tenant = self.tenants.get(tenant_id)
        if tenant is None:
            return None
        host = tenant.resolve(process_id)
        if host is None:
            return None
        with host.lock:
            var = host.externals.get(external_name)
            if var is None:
                return None
            sub_id = f"{process_id}.{external_name}"
            if sub_id not in self.streams.subs:
                self.streams.subscribe(sub_id, process_id, var)
                self.streams.check(host.machine)
            return sub_id

    # -- lifecycle ------------------------------------------------------------

    def passivate_all(self) -> int:
        return sum(t.passivate_idle(0) for t in self.tenants.values())

    def close(self):
        self.passivate_all()
        self.correlations.close()
