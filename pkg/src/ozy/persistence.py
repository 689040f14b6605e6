"""Durable snapshots of quiescent process machines.

Format: magic `OZSS`, big-endian u32 version, then a canonical JSON body
(sorted keys, compact separators) encoded as UTF-8.  Canonical ordering
everywhere makes two snapshots of the same machine state byte-identical.
Values are serialized as a variable graph (varId indirection), so cyclic
records are representable and closures carry no host state.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

from . import kernel as k
from .machine import (
    PARTIALLY_ACTIVE,
    RUNNABLE,
    SUSPENDED,
    Machine,
    SemanticStack,
    SemanticStatement,
)
from .store import Alias, Determined, Failed, Unbound
from .values import Atom, Bool, BuiltinRef, Closure, Float, Int, Record

MAGIC = b"OZSS"
FORMAT_VERSION = 1


class SnapshotError(Exception):
    pass


class RestoreError(Exception):
    pass


@dataclass
class Snapshot:
    body: dict

    @property
    def process_id(self):
        return self.body["processId"]

    @property
    def reduction_count(self):
        return self.body["reductionCount"]

    def to_bytes(self) -> bytes:
        payload = json.dumps(self.body, sort_keys=True, separators=(",", ":"))
        return MAGIC + struct.pack(">I", FORMAT_VERSION) + payload.encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Snapshot":
        if data[:4] != MAGIC:
            raise RestoreError("bad magic bytes")
        (version,) = struct.unpack(">I", data[4:8])
        if version != FORMAT_VERSION:
            raise RestoreError(f"unsupported snapshot version {version}")
        try:
            body = json.loads(data[8:].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise RestoreError(f"corrupt snapshot body: {e}") from e
        return cls(body)

    def debug_json(self) -> str:
        return json.dumps(self.body, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# capture


class _StatementTable:
    def __init__(self):
        self.by_key: dict = {}
        self.rows: list = []

    def index(self, stmt: k.Statement) -> int:
        data = k.stmt_to_data(stmt)
        key = json.dumps(data, sort_keys=True, separators=(",", ":"))
        if key not in self.by_key:
            self.by_key[key] = len(self.rows)
            self.rows.append(data)
        return self.by_key[key]


def snapshot(machine: Machine, pending_timers=(), externals=None,
             program_digest="", allow_active=False) -> Snapshot:
    """Capture the reachable machine state.

    pending_timers: iterable of (var_id, deadline_ms, virtual_flag).
    externals: external attribute name -> var id for this process.
    """
    if machine.status == PARTIALLY_ACTIVE and not allow_active:
        raise SnapshotError("machine is partially active; snapshot rejected")
    externals = dict(externals or {})
    table = _StatementTable()
    store = machine.store

    # reachability roots
    roots = []
    for stack in machine.stacks.values():
        for frame in stack.frames:
            roots.extend(frame.env.values())
        if stack.waiting_on is not None:
            roots.append(stack.waiting_on)
    roots.extend(machine.toplevel_env.values())
    roots.extend(machine.obligations.values())
    roots.extend(externals.values())
    roots.extend(v for v, _d, _f in pending_timers)
    roots.extend(r["result_var"] for r in machine.inflight_outbound)

    reachable = set()
    frontier = [store.deref(v)[0] for v in roots]
    while frontier:
        v = frontier.pop()
        if v in reachable:
            continue
        reachable.add(v)
        state = store.cells[v]
        if isinstance(state, Determined):
            value = state.value
            if isinstance(value, Record):
                frontier.extend(store.deref(f)[0] for f in value.features.values())
            elif isinstance(value, Closure):
                frontier.extend(store.deref(f)[0] for f in value.env.values())
        elif isinstance(state, Failed):
            exc = state.exception
            if isinstance(exc, Record):
                frontier.extend(store.deref(f)[0] for f in exc.features.values())
            elif isinstance(exc, Closure):
                frontier.extend(store.deref(f)[0] for f in exc.env.values())
        elif isinstance(state, Unbound) and state.trigger is not None:
            frontier.extend(store.deref(f)[0] for f in state.trigger.env.values())

    graph = {}
    for v in sorted(reachable):
        graph[str(v)] = _state_to_data(store, store.cells[v], table)

    stacks = []
    for stack in sorted(machine.stacks.values(), key=lambda s: s.id):
        stacks.append(
            {
                "id": stack.id,
                "state": stack.state,
                "waitingOn": _root_or_none(store, stack.waiting_on),
                "frames": [
                    {
                        "stmt": table.index(f.stmt),
                        "env": {i: store.deref(v)[0] for i, v in sorted(f.env.items())},
                    }
                    for f in stack.frames
                ],
            }
        )

    body = {
        "formatVersion": FORMAT_VERSION,
        "processId": machine.process_id,
        "programDigest": program_digest,
        "status": machine.status,
        "reductionCount": machine.reduction_count,
        "schedulerSeedState": machine.seed,
        "nextVarId": store.next_id,
        "nextStackId": machine.next_stack_id,
        "stacks": stacks,
        "storeGraph": graph,
        "statementTable": table.rows,
        "toplevelEnv": {i: store.deref(v)[0] for i, v in sorted(machine.toplevel_env.items())},
        "obligations": {str(s): store.deref(v)[0] for s, v in sorted(machine.obligations.items())},
        "pendingTimers": [
            {"varId": store.deref(v)[0], "deadline": d, "virtual": bool(f)}
            for v, d, f in sorted(pending_timers, key=lambda t: (t[1], t[0]))
        ],
        "correlations": {name: store.deref(v)[0] for name, v in sorted(externals.items())},
        "inflightOutbound": sorted(
            (
                {
                    "id": r["id"],
                    "connector": r["connector"],
                    "operation": r["operation"],
                    "args": r["args"],
                    "result_var": store.deref(r["result_var"])[0],
                    "idempotent": r["idempotent"],
                }
                for r in machine.inflight_outbound
            ),
            key=lambda r: r["id"],
        ),
        "uncaught": list(machine.uncaught),
    }
    return Snapshot(body)


def _root_or_none(store, v):
    return None if v is None else store.deref(v)[0]


def _value_to_data(store, value, table):
    if isinstance(value, Int):
        return {"v": "int", "n": value.n}
    if isinstance(value, Float):
        return {"v": "float", "x": repr(value.x)}
    if isinstance(value, Bool):
        return {"v": "bool", "b": value.b}
    if isinstance(value, Atom):
        return {"v": "atom", "name": value.name}
    if isinstance(value, BuiltinRef):
        return {"v": "builtin", "name": value.name}
    if isinstance(value, Record):
        return {
            "v": "rec",
            "label": value.label,
            "features": {
                (str(f) if isinstance(f, int) else "a:" + f): store.deref(fv)[0]
                for f, fv in value.features.items()
            },
        }
    if isinstance(value, Closure):
        return {
            "v": "clos",
            "params": list(value.params),
            "body": table.index(value.body),
            "env": {i: store.deref(v)[0] for i, v in sorted(value.env.items())},
        }
    raise SnapshotError(f"unserializable value {type(value).__name__}")


def _state_to_data(store, state, table):
    if isinstance(state, Unbound):
        out = {"state": "unbound"}
        if state.trigger is not None:
            out["trigger"] = _value_to_data(store, state.trigger, table)
            out["triggerNeeded"] = state.trigger_needed
        return out
    if isinstance(state, Determined):
        return {"state": "det", "value": _value_to_data(store, state.value, table)}
    if isinstance(state, Failed):
        return {"state": "failed", "exception": _value_to_data(store, state.exception, table)}
    if isinstance(state, Alias):
        return {"state": "alias", "target": state.target}
    raise SnapshotError(f"bad store state {state!r}")


# ---------------------------------------------------------------------------
# restore


def restore(snap: Snapshot, services=None, trace=False) -> Machine:
    body = snap.body
    if body.get("formatVersion") != FORMAT_VERSION:
        raise RestoreError(f"unsupported version {body.get('formatVersion')}")
    statements = [k.stmt_from_data(d) for d in body["statementTable"]]

    def stmt_at(index):
        try:
            return statements[index]
        except (IndexError, TypeError):
            raise RestoreError(f"bad statement index {index}")

    graph = body["storeGraph"]
    known = {int(vid) for vid in graph}

    def check_var(vid):
        if vid not in known:
            raise RestoreError(f"dangling variable reference v{vid}")
        return vid

    m = Machine(body["processId"], seed=body["schedulerSeedState"],
                services=services, trace=trace)
    store = m.store

    def value_from(d):
        kind = d["v"]
        if kind == "int":
            return Int(d["n"])
        if kind == "float":
            return Float(float(d["x"]))
        if kind == "bool":
            return Bool(d["b"])
        if kind == "atom":
            return Atom(d["name"])
        if kind == "builtin":
            return BuiltinRef(d["name"])
        if kind == "rec":
            feats = {}
            for key, vid in d["features"].items():
                feat = key[2:] if key.startswith("a:") else int(key)
                feats[feat] = check_var(vid)
            return Record(d["label"], feats)
        if kind == "clos":
            return Closure(
                list(d["params"]),
                stmt_at(d["body"]),
                {i: check_var(v) for i, v in d["env"].items()},
            )
        raise RestoreError(f"bad value kind {kind!r}")

    for vid_str, entry in graph.items():
        vid = int(vid_str)
        state_kind = entry["state"]
        if state_kind == "unbound":
            st = Unbound()
            if "trigger" in entry:
                st.trigger = value_from(entry["trigger"])
                st.trigger_needed = entry.get("triggerNeeded", False)
            store.cells[vid] = st
        elif state_kind == "det":
            store.cells[vid] = Determined(value_from(entry["value"]))
        elif state_kind == "failed":
            store.cells[vid] = Failed(value_from(entry["exception"]))
        elif state_kind == "alias":
            store.cells[vid] = Alias(check_var(entry["target"]))
        else:
            raise RestoreError(f"bad state kind {state_kind!r}")
    store.next_id = body["nextVarId"]

    for sdata in body["stacks"]:
        stack = SemanticStack(sdata["id"])
        stack.state = sdata["state"]
        stack.waiting_on = sdata["waitingOn"]
        for f in sdata["frames"]:
            env = {i: check_var(v) for i, v in f["env"].items()}
            stack.frames.append(SemanticStatement(stmt_at(f["stmt"]), env))
        m.stacks[stack.id] = stack
        if stack.state == SUSPENDED and stack.waiting_on is not None:
            check_var(stack.waiting_on)
            cell = store.cells[store.deref(stack.waiting_on)[0]]
            if isinstance(cell, Unbound):
                cell.suspensions.add(stack.id)
            else:
                # bound between capture and restore is impossible; treat as wake
                stack.state = RUNNABLE
                stack.waiting_on = None
    m.next_stack_id = body["nextStackId"]
    m.reduction_count = body["reductionCount"]
    m.toplevel_env = {i: check_var(v) for i, v in body["toplevelEnv"].items()}
    m.obligations = {int(s): check_var(v) for s, v in body["obligations"].items()}
    m.inflight_outbound = [dict(r) for r in body["inflightOutbound"]]
    m.uncaught = list(body["uncaught"])
    m.classify_status()
    return m


def restored_externals(snap: Snapshot) -> dict:
    return dict(snap.body["correlations"])


def restored_timers(snap: Snapshot) -> list:
    return [(t["varId"], t["deadline"], t["virtual"]) for t in snap.body["pendingTimers"]]


# ---------------------------------------------------------------------------
# files


def snapshot_filename(tenant_id, process_id, reduction_count) -> str:
    return f"{tenant_id}.{process_id}.{reduction_count}.ozss"


def write_snapshot(snap: Snapshot, directory, tenant_id="local") -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(
        directory, snapshot_filename(tenant_id, snap.process_id, snap.reduction_count)
    )
    data = snap.to_bytes()
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as e:
        raise SnapshotError(f"cannot write snapshot {path}: {e}") from e
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def read_snapshot(path) -> Snapshot:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise RestoreError(f"cannot read snapshot {path}: {e}") from e
    return Snapshot.from_bytes(data)
