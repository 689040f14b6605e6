"""Single-process local execution: wires a machine to a clock, timers and
local connectors without any routing layer (used by the CLI `run` command
and by tests)."""

from __future__ import annotations

import threading

from .connectors import MachineServices, StreamManager, TimerService, VirtualClock
from .machine import PARTIALLY_ACTIVE, create_process
from .values import Atom


class LocalRunner:
    def __init__(self, program, seed=0, clock=None, connectors=None, trace=False,
                 budget=1000, stream_manager=None):
        self.clock = clock if clock is not None else VirtualClock()
        self.timers = TimerService(self.clock)
        self.streams = stream_manager if stream_manager is not None else StreamManager()
        self.correlations: dict = {}  # attribute name -> jsonable payload
        self.externals: dict = {}  # external name -> var id
        conns = dict(connectors or {})
        if "Orch" not in conns:
            from .routing import OrchConnector

            conns["Orch"] = OrchConnector()
        self.services = MachineServices(self.clock, self.timers, conns, owner=self)
        self.budget = budget
        self._lock = threading.RLock()
        self.machine = create_process(
            "local",
            program.statement,
            seed=seed,
            services=self.services,
            trace=trace,
            fresh_idents=program.toplevel,
        )
        self.program = program

    # owner callbacks ---------------------------------------------------------

    def register_correlation(self, name, payload):
        self.correlations[name] = payload

    def register_external(self, name, var_id):
        self.externals[name] = var_id

    def commit_flush(self):
        pass

    def deliver_outbound(self, process_id, request, ok, payload):
        with self._lock:
            m = self.machine
            m.inflight_outbound = [r for r in m.inflight_outbound if r["id"] != request["id"]]
            store = m.store
            if ok:
                from .connectors import jsonable_to_value

                m.bind_external(request["result_var"], _deref_value(store, jsonable_to_value(store, payload)))
            else:
                from .values import Record

                m.fail_external(
                    request["result_var"],
                    Record(
                        "connectorError",
                        {
                            1: store.put(_int_or_atom(payload.get("status", 0))),
                            2: store.put(Atom(str(payload.get("reason", ""))[:200])),
                        },
                    ),
                )
            self.run_to_quiescence()

    # execution ---------------------------------------------------------------

    def run_to_quiescence(self):
        with self._lock:
            while self.machine.classify_status() == PARTIALLY_ACTIVE:
                self.machine.run_slice(self.budget)
            self.streams.check(self.machine)
            return self.machine.status

    def tick(self):
        with self._lock:
            for entry in self.timers.due():
                self.machine.bind_external(entry.var_id, Atom("unit"))
            return self.run_to_quiescence()

    def advance(self, delta_ms):
        with self._lock:
            self.clock.advance(delta_ms)
            return self.tick()

    def pending_timers(self):
        return self.timers.pending_for(self.machine.process_id)

    def toplevel_bindings(self):
        """Deref each top-level program variable; None means still unbound."""
        from .connectors import ConversionError, value_to_jsonable
        from .store import Determined, Failed

        out = {}
        for ident in sorted(self.program.toplevel):
            var = self.machine.toplevel_env[ident]
            root, state = self.machine.store.deref(var)
            if isinstance(state, Determined):
                try:
                    out[ident] = value_to_jsonable(self.machine.store, root)
                except ConversionError:
                    out[ident] = "<partial>"
            elif isinstance(state, Failed):
                out[ident] = "<failed>"
            else:
                out[ident] = None
        return out


def _deref_value(store, var):
    _, state = store.deref(var)
    return state.value


def _int_or_atom(v):
    from .values import Int

    return Int(v) if isinstance(v, int) else Atom(str(v))
