"""Container configuration: a single YAML document, schema-validated at boot
with precise error paths, programs compiled fail-fast, connectors built from
declarative specs.

Environment overrides: OZY_DATA_DIR replaces dataDir, OZY_LISTEN replaces
listen (host:port).
"""

from __future__ import annotations

import os
from typing import Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from .connectors import (
    ConnectorSpec,
    OutboundHttpConnector,
    make_registry_connector,
    make_tank_connector,
)
from .lang import DesugarError, LexError, ParseError, load_program
from .routing import TOKEN_RE


class ConfigError(Exception):
    pass


class ConnectorConfig(BaseModel):
    name: str
    kind: Literal["httpOutbound", "local"]
    endpoint: str = ""
    timeoutMs: int = 5000
    idempotentOps: List[str] = Field(default_factory=list)
    factory: Optional[Literal["registry", "tank"]] = None
    options: dict = Field(default_factory=dict)

    @field_validator("endpoint")
    @classmethod
    def _endpoint_for_http(cls, v, info):
        if info.data.get("kind") == "httpOutbound" and not v.startswith(("http://", "https://")):
            raise ValueError("httpOutbound endpoint must be an absolute URL")
        return v


class TenantConfig(BaseModel):
    tenantId: str
    token: str = ""
    programs: Dict[str, str] = Field(default_factory=dict)  # name -> .oz file
    connectors: List[ConnectorConfig] = Field(default_factory=list)

    @field_validator("tenantId")
    @classmethod
    def _token_grammar(cls, v):
        if not TOKEN_RE.match(v):
            raise ValueError(f"tenant id {v!r} must match [A-Za-z0-9_-]{{1,64}}")
        return v


class ContainerConfig(BaseModel):
    dataDir: str = "./ozy-data"
    listen: str = "127.0.0.1:8080"
    sliceBudget: int = 1000
    idlePassivationMs: int = 60_000
    clockMode: Literal["real", "virtual"] = "real"
    tenants: List[TenantConfig] = Field(default_factory=list)


def load_config(path: str) -> ContainerConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: bad YAML: {e}") from e
    if raw is None:
        raw = {}
    try:
        cfg = ContainerConfig.model_validate(raw)
    except ValidationError as e:
        lines = [
            f"{path}: {'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
            for err in e.errors()
        ]
        raise ConfigError("\n".join(lines)) from e
    if os.environ.get("OZY_DATA_DIR"):
        cfg.dataDir = os.environ["OZY_DATA_DIR"]
    if os.environ.get("OZY_LISTEN"):
        cfg.listen = os.environ["OZY_LISTEN"]
    return cfg


def compile_programs(tenant: TenantConfig, base_dir=".") -> dict:
    """Parse and desugar every program file up front (fail-fast boot)."""
    programs = {}
    for name, rel in tenant.programs.items():
        path = rel if os.path.isabs(rel) else os.path.join(base_dir, rel)
        try:
            with open(path) as fh:
                source = fh.read()
        except OSError as e:
            raise ConfigError(f"tenant {tenant.tenantId}: program {name}: {e}") from e
        try:
            programs[name] = load_program(source, name=path)
        except (LexError, ParseError, DesugarError) as e:
            raise ConfigError(f"{path}: {e}") from e
    return programs


def build_connectors(tenant: TenantConfig, base_dir=".") -> dict:
    out = {}
    for cc in tenant.connectors:
        if cc.name in out:
            raise ConfigError(f"tenant {tenant.tenantId}: duplicate connector {cc.name}")
        if cc.kind == "httpOutbound":
            spec = ConnectorSpec(
                cc.name, "httpOutbound", cc.endpoint, cc.timeoutMs,
                tuple(cc.idempotentOps), dict(cc.options),
            )
            out[cc.name] = OutboundHttpConnector(spec)
        elif cc.factory == "registry":
            conn = make_registry_connector(cc.options)
            conn.name = cc.name
            out[cc.name] = conn
        elif cc.factory == "tank":
            levels = cc.options.get("levelsFile", "levels.txt")
            if not os.path.isabs(levels):
                levels = os.path.join(base_dir, levels)
            conn = make_tank_connector(levels)
            conn.name = cc.name
            out[cc.name] = conn
        else:
            raise ConfigError(
                f"tenant {tenant.tenantId}: local connector {cc.name} needs a factory"
            )
    return out
