"""HTTP front end: inbound connector exposing the container's routing as a
JSON API with per-tenant bearer tokens and SSE stream push.

Ask requests hold the HTTP response open until the reply or the timeout;
Tell returns immediately after enqueue.
"""

from __future__ import annotations

import json
import queue
from typing import Optional

from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .routing import Container, Envelope, RoutingError

DEFAULT_ASK_TIMEOUT_MS = 10_000
SSE_POLL_SECONDS = 0.25


class CreateProcessRequest(BaseModel):
    program: str
    mode: str = "tell"
    procedure: Optional[str] = None
    args: Optional[list] = None
    correlation: Optional[dict] = None
    seed: int = 0
    timeoutMs: int = DEFAULT_ASK_TIMEOUT_MS


class MessageRequest(BaseModel):
    mode: str = "tell"
    processId: Optional[str] = None
    correlation: Optional[dict] = None
    procedure: Optional[str] = None
    external: Optional[str] = None
    args: Optional[list] = None
    value: object = None
    timeoutMs: int = DEFAULT_ASK_TIMEOUT_MS


def create_app(container: Container) -> FastAPI:
    app = FastAPI(title="ozy", docs_url=None, redoc_url=None)
    app.state.container = container

    def tenant_or_404(tenant_id, authorization):
        tenant = container.tenants.get(tenant_id)
        if tenant is None:
            raise HTTPException(404, f"unknown tenant {tenant_id!r}")
        if tenant.token:
            if authorization != f"Bearer {tenant.token}":
                raise HTTPException(401, "bad token")
        return tenant

    def reply_response(kind, payload, created=None):
        if kind == "failure":
            label = payload.get("$label") if isinstance(payload, dict) else None
            if label == "askTimeout":
                return JSONResponse({"failure": payload}, status_code=504)
            if label in ("undeliverable", "unknownTenant"):
                return JSONResponse({"failure": payload}, status_code=404)
            return JSONResponse({"failure": payload}, status_code=200)
        body = {"reply": payload}
        if created is not None:
            body["processId"] = created
        return JSONResponse(body, status_code=201 if created is not None else 200)

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/root/tenants/{tenant_id}/processes")
    def create_process(tenant_id: str, req: CreateProcessRequest,
                       authorization: Optional[str] = Header(default=None)):
        tenant_or_404(tenant_id, authorization)
        env = Envelope(
            req.mode, tenant_id, program=req.program, procedure=req.procedure,
            args=req.args, correlation=req.correlation, seed=req.seed,
        )
        if req.mode == "ask":
            kind, payload, pid = container.ask(env, timeout_ms=req.timeoutMs)
            if kind == "failure":
                return reply_response(kind, payload)
            return reply_response(kind, payload, created=pid)
        pid = container.tell(env)
        if pid is None:
            raise HTTPException(404, f"unknown program {req.program!r}")
        return JSONResponse({"processId": pid}, status_code=201)

    @app.post("/root/tenants/{tenant_id}/messages")
    def post_message(tenant_id: str, req: MessageRequest,
                     authorization: Optional[str] = Header(default=None)):
        tenant_or_404(tenant_id, authorization)
        if req.procedure is None and req.external is None:
            raise HTTPException(400, "message needs a procedure or external name")
        env = Envelope(
            req.mode, tenant_id, process_id=req.processId,
            correlation=req.correlation, procedure=req.procedure,
            external=req.external, args=req.args, value=req.value,
        )
        if req.mode == "ask":
            kind, payload, _pid = container.ask(env, timeout_ms=req.timeoutMs)
            return reply_response(kind, payload)
        pid = container.tell(env)
        if pid is None and req.processId is not None:
            raise HTTPException(404, f"unknown process {req.processId!r}")
        return JSONResponse({"accepted": True, "processId": pid}, status_code=202)

    @app.get("/root/tenants/{tenant_id}/processes")
    def list_processes(tenant_id: str,
                       authorization: Optional[str] = Header(default=None)):
        tenant = tenant_or_404(tenant_id, authorization)
        return {"processes": tenant.process_list()}

    @app.get("/root/tenants/{tenant_id}/deadletters")
    def list_deadletters(tenant_id: str,
                         authorization: Optional[str] = Header(default=None)):
        tenant_or_404(tenant_id, authorization)
        return {"deadletters": container.dead_letters.list(tenant_id)}

    @app.get("/root/tenants/{tenant_id}/processes/{process_id}")
    def get_process(tenant_id: str, process_id: str,
                    authorization: Optional[str] = Header(default=None)):
        tenant = tenant_or_404(tenant_id, authorization)
        host = tenant.resolve(process_id)
        if host is None:
            raise HTTPException(404, f"unknown process {process_id!r}")
        return host.status_view()

    @app.get("/root/tenants/{tenant_id}/streams/{subscription_id}")
    async def get_stream(tenant_id: str, subscription_id: str, request: Request,
                         authorization: Optional[str] = Header(default=None)):
        tenant_or_404(tenant_id, authorization)
        # subscription ids are `<processId>.<externalName>`; subscribing is
        # idempotent, so the first GET creates the watcher
        process_id, _, external = subscription_id.partition(".")
        sub_id = container.subscribe_stream(tenant_id, process_id, external)
        if sub_id is None:
            raise HTTPException(404, f"unknown stream {subscription_id!r}")
        sink: queue.Queue = queue.Queue()
        container.streams.attach_sink(sub_id, sink, replay=True)

        async def events():
            import asyncio

            while True:
                if await request.is_disconnected():
                    return
                try:
                    kind, payload = sink.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(SSE_POLL_SECONDS)
                    continue
                if kind == "end":
                    yield "event: end\ndata: null\n\n"
                    return
                yield f"data: {json.dumps(payload, sort_keys=True)}\n\n"

        return StreamingResponse(events(), media_type="text/event-stream")

    @app.exception_handler(RoutingError)
    def routing_error(_request, exc):
        return JSONResponse({"error": str(exc)}, status_code=404)

    return app
