"""Operator command line: run programs locally, serve the container, and
talk to a running container over its HTTP API."""

from __future__ import annotations

import json
import os
import sys

import click

from . import persistence
from .lang import DesugarError, LexError, ParseError, load_program
from .store import Determined, Failed, Unbound
from .values import Atom, Bool, Closure, Float, Int, Record, format_atom, is_cons, is_nil

EXIT_PARSE_ERROR = 1
EXIT_RUNTIME_CRASH = 2
EXIT_STUCK = 3


def render_value(store, var, depth=0) -> str:
    """Surface-syntax rendering of a store value for printed bindings."""
    if depth > 8:
        return "..."
    root, state = store.deref(var)
    if isinstance(state, Unbound):
        return "_"
    if isinstance(state, Failed):
        return "<failed>"
    v = state.value
    if isinstance(v, Int):
        return str(v.n)
    if isinstance(v, Float):
        return repr(v.x)
    if isinstance(v, Bool):
        return "true" if v.b else "false"
    if isinstance(v, Atom):
        return format_atom(v.name)
    if isinstance(v, Closure):
        return f"<proc/{len(v.params)}>"
    if isinstance(v, Record):
        if is_nil(v):
            return "nil"
        if is_cons(v):
            items = []
            seen = set()
            while True:
                if root in seen or len(items) > 50:
                    items.append("...")
                    break
                seen.add(root)
                items.append(render_value(store, v.features[1], depth + 1))
                root, state = store.deref(v.features[2])
                if not isinstance(state, Determined):
                    items.append("_" if isinstance(state, Unbound) else "<failed>")
                    break
                v = state.value
                if is_nil(v):
                    break
                if not is_cons(v):
                    items.append(render_value(store, root, depth + 1))
                    break
            return "[" + " ".join(items) + "]"
        feats = []
        for f, fv in v.features.items():
            key = f"{f}:" if not isinstance(f, int) else ""
            feats.append(key + render_value(store, fv, depth + 1))
        return f"{format_atom(v.label)}({' '.join(feats)})"
    return repr(v)


@click.group()
def main():
    """Dataflow orchestration container."""


@main.command()
@click.argument("file", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, help="Scheduler seed (replayable).")
@click.option("--trace", is_flag=True, help="Print the execution log.")
@click.option("--advance", multiple=True, type=int,
              help="Advance the virtual clock by N ms once quiescent (repeatable).")
@click.option("--budget", default=1000, show_default=True, help="Reductions per slice.")
@click.option("--expect-terminate", is_flag=True,
              help="Exit 3 if the program is left waiting with no pending timers.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Container config supplying connectors for local runs.")
@click.option("--tenant", "tenant_id", default=None,
              help="Tenant in --config whose connectors to wire.")
def run(file, seed, trace, advance, budget, expect_terminate, config_path, tenant_id):
    """Run a program locally on a virtual clock and print its bindings."""
    from .runner import LocalRunner

    try:
        with open(file) as fh:
            program = load_program(fh.read(), name=file)
    except (LexError, ParseError, DesugarError) as e:
        click.echo(f"{file}: {e}", err=True)
        sys.exit(EXIT_PARSE_ERROR)

    connectors = None
    if config_path is not None:
        from .config import ConfigError, build_connectors, load_config

        try:
            cfg = load_config(config_path)
            base = os.path.dirname(os.path.abspath(config_path))
            wanted = [
                t for t in cfg.tenants
                if tenant_id is None or t.tenantId == tenant_id
            ]
            connectors = {}
            for t in wanted:
                connectors.update(build_connectors(t, base))
        except ConfigError as e:
            click.echo(str(e), err=True)
            sys.exit(EXIT_PARSE_ERROR)

    runner = LocalRunner(program, seed=seed, connectors=connectors,
                         trace=trace, budget=budget)
    runner.run_to_quiescence()
    for delta in advance:
        runner.advance(delta)
    # drain any still-pending timers the advances already covered
    runner.tick()

    if trace:
        for line in runner.machine.log_lines:
            click.echo(line)
    for ident in sorted(program.toplevel):
        click.echo(f"{ident} = {render_value(runner.machine.store, runner.machine.toplevel_env[ident])}")
    status = runner.machine.status
    click.echo(f"status: {status}")
    for note in runner.machine.uncaught:
        click.echo(f"uncaught: {note}", err=True)
    if status == "crashed" or runner.machine.uncaught:
        sys.exit(EXIT_RUNTIME_CRASH)
    if expect_terminate and status != "terminated" and not runner.pending_timers():
        sys.exit(EXIT_STUCK)


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
def serve(config_path):
    """Boot the container and serve its HTTP API."""
    import threading
    import time as _time

    import uvicorn

    from .config import ConfigError, build_connectors, compile_programs, load_config
    from .connectors import RealClock, VirtualClock
    from .routing import Container
    from .server import create_app

    try:
        cfg = load_config(config_path)
        base = os.path.dirname(os.path.abspath(config_path))
        clock = VirtualClock() if cfg.clockMode == "virtual" else RealClock()
        container = Container(cfg.dataDir, clock=clock, slice_budget=cfg.sliceBudget)
        for tc in cfg.tenants:
            container.add_tenant(
                tc.tenantId,
                token=tc.token,
                programs=compile_programs(tc, base),
                connectors=build_connectors(tc, base),
            )
    except ConfigError as e:
        click.echo(str(e), err=True)
        sys.exit(1)

    stop = threading.Event()

    def housekeeping():
        while not stop.is_set():
            container.tick()
            for tenant in container.tenants.values():
                tenant.passivate_idle(cfg.idlePassivationMs)
            stop.wait(0.05)

    worker = threading.Thread(target=housekeeping, daemon=True)
    worker.start()
    host, _, port = cfg.listen.partition(":")
    try:
        uvicorn.run(create_app(container), host=host or "127.0.0.1",
                    port=int(port or 8080), log_level="warning")
    finally:
        stop.set()
        worker.join(timeout=2)
        container.close()


def _client_base():
    listen = os.environ.get("OZY_LISTEN", "127.0.0.1:8080")
    return f"http://{listen}"


def _client_get(path, token):
    import httpx

    headers = {"Authorization": f"Bearer {token}"} if token else {}
    resp = httpx.get(_client_base() + path, headers=headers, timeout=30)
    if resp.status_code // 100 != 2:
        click.echo(f"{resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    return resp.json()


@main.command()
@click.option("--tenant", required=True)
@click.option("--token", default="")
def ps(tenant, token):
    """List a tenant's processes with status and frontier."""
    body = _client_get(f"/root/tenants/{tenant}/processes", token)
    for row in body["processes"]:
        frontier = ",".join(row["frontier"])
        click.echo(f"{row['processId']}  {row['status']}  frontier=[{frontier}]")


@main.command()
@click.option("--tenant", required=True)
@click.option("--token", default="")
@click.option("--ask/--tell", "ask_mode", default=False)
@click.option("--process", "process_id", default=None)
@click.option("--program", default=None)
@click.option("--procedure", default=None)
@click.option("--external", default=None)
@click.option("--value", default=None, help="JSON payload for --external.")
@click.option("--args", "args_json", default=None, help="JSON array of arguments.")
@click.option("--correlation", default=None, help="JSON object of business attributes.")
@click.option("--timeout-ms", default=10_000, show_default=True)
def send(tenant, token, ask_mode, process_id, program, procedure, external,
         value, args_json, correlation, timeout_ms):
    """Send a Tell or Ask message through the HTTP API."""
    import httpx

    try:
        body = {
            "mode": "ask" if ask_mode else "tell",
            "processId": process_id,
            "procedure": procedure,
            "external": external,
            "value": json.loads(value) if value is not None else None,
            "args": json.loads(args_json) if args_json is not None else None,
            "correlation": json.loads(correlation) if correlation is not None else None,
            "timeoutMs": timeout_ms,
        }
    except json.JSONDecodeError as e:
        click.echo(f"bad JSON argument: {e}", err=True)
        sys.exit(1)
    if program is not None:
        body["program"] = program
        path = f"/root/tenants/{tenant}/processes"
    else:
        path = f"/root/tenants/{tenant}/messages"
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    resp = httpx.post(_client_base() + path, json=body, headers=headers,
                      timeout=timeout_ms / 1000 + 30)
    click.echo(json.dumps(resp.json(), sort_keys=True))
    if resp.status_code // 100 != 2:
        sys.exit(1)


@main.command()
@click.argument("snapshot_path", type=click.Path(exists=True))
def inspect(snapshot_path):
    """Print a snapshot's metadata and JSON debug rendering."""
    try:
        snap = persistence.read_snapshot(snapshot_path)
    except persistence.RestoreError as e:
        click.echo(str(e), err=True)
        sys.exit(1)
    body = snap.body
    click.echo(
        f"version={body['formatVersion']} process={body['processId']} "
        f"reductions={body['reductionCount']} stacks={len(body['stacks'])} "
        f"vars={len(body['storeGraph'])}"
    )
    click.echo(snap.debug_json())


@main.command()
@click.option("--tenant", required=True)
@click.option("--token", default="")
def deadletters(tenant, token):
    """List dead-lettered envelopes for a tenant."""
    body = _client_get(f"/root/tenants/{tenant}/deadletters", token)
    for row in body["deadletters"]:
        click.echo(json.dumps(row, sort_keys=True))


if __name__ == "__main__":
    main()
