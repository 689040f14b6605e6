"""Kernel statements: the desugared statement forms executed by the machine.

Two extra variants (CatchMarker, WaitVar) never come out of the desugarer;
they are pushed by the machine itself (exception handler frames, timer
waits) and must survive snapshots, so they live here with the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .values import Feature, canonical_features, feature_sort_key

# ---------------------------------------------------------------------------
# Patterns


@dataclass(frozen=True)
class LitPat:
    """Matches an int/float/bool/atom constant."""

    kind: str  # int | float | bool | atom
    value: object


@dataclass(frozen=True)
class CapturePat:
    ident: str


@dataclass
class RecordPat:
    label: str
    features: dict  # Feature -> Pattern

    def __post_init__(self):
        self.features = canonical_features(self.features)


Pattern = Union[LitPat, CapturePat, RecordPat]


def pattern_captures(p: Pattern) -> list:
    if isinstance(p, CapturePat):
        return [p.ident]
    if isinstance(p, RecordPat):
        out = []
        for sub in p.features.values():
            out.extend(pattern_captures(sub))
        return out
    return []


# ---------------------------------------------------------------------------
# Value literals (the rhs of BindValue)


@dataclass(frozen=True)
class NumberLit:
    value: object  # int or float


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class AtomLit:
    name: str


@dataclass
class RecordLit:
    label: str
    features: dict  # Feature -> identifier name

    def __post_init__(self):
        self.features = canonical_features(self.features)


@dataclass
class ProcLit:
    params: list
    body: "Statement"
    free: tuple  # exact free-identifier set, sorted

    def __post_init__(self):
        self.free = tuple(sorted(self.free))


ValueLiteral = Union[NumberLit, BoolLit, AtomLit, RecordLit, ProcLit]


# ---------------------------------------------------------------------------
# Statements


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Seq:
    first: "Statement"
    second: "Statement"


@dataclass(frozen=True)
class Local:
    ident: str
    body: "Statement"


@dataclass(frozen=True)
class BindVarVar:
    lhs: str
    rhs: str


@dataclass
class BindValue:
    lhs: str
    literal: ValueLiteral


@dataclass(frozen=True)
class Conditional:
    scrutinee: str
    then_body: "Statement"
    else_body: "Statement"


@dataclass
class Match:
    scrutinee: str
    clauses: list  # list of (Pattern, Statement)
    else_body: Optional["Statement"]


@dataclass
class Apply:
    proc: str  # identifier, possibly dotted "Mod.op"
    args: list  # identifier names


@dataclass(frozen=True)
class SpawnThread:
    body: "Statement"


@dataclass(frozen=True)
class TryCatch:
    body: "Statement"
    ident: str
    handler: "Statement"


@dataclass(frozen=True)
class Raise:
    ident: str


@dataclass(frozen=True)
class CatchMarker:
    """Machine-internal: marks an active exception handler on a stack."""

    ident: str
    handler: "Statement"


@dataclass(frozen=True)
class WaitVar:
    """Machine-internal: block until the named variable is bound."""

    ident: str


Statement = Union[
    Skip,
    Seq,
    Local,
    BindVarVar,
    BindValue,
    Conditional,
    Match,
    Apply,
    SpawnThread,
    TryCatch,
    Raise,
    CatchMarker,
    WaitVar,
]


# ---------------------------------------------------------------------------
# Free identifiers

def free_identifiers(stmt: Statement) -> frozenset:
    """Identifiers referenced but not bound within stmt.

    Procedure literals contribute their recorded free sets (already net of
    their parameters).
    """
    if isinstance(stmt, Skip):
        return frozenset()
    if isinstance(stmt, Seq):
        return free_identifiers(stmt.first) | free_identifiers(stmt.second)
    if isinstance(stmt, Local):
        return free_identifiers(stmt.body) - {stmt.ident}
    if isinstance(stmt, BindVarVar):
        return frozenset({stmt.lhs, stmt.rhs})
    if isinstance(stmt, BindValue):
        return frozenset({stmt.lhs}) | literal_free(stmt.literal)
    if isinstance(stmt, Conditional):
        return (
            frozenset({stmt.scrutinee})
            | free_identifiers(stmt.then_body)
            | free_identifiers(stmt.else_body)
        )
    if isinstance(stmt, Match):
        out = {stmt.scrutinee}
        for pat, body in stmt.clauses:
            out |= free_identifiers(body) - set(pattern_captures(pat))
        if stmt.else_body is not None:
            out |= free_identifiers(stmt.else_body)
        return frozenset(out)
    if isinstance(stmt, Apply):
        base = stmt.proc.split(".", 1)[0]
        return frozenset({base}) | frozenset(stmt.args)
    if isinstance(stmt, SpawnThread):
        return free_identifiers(stmt.body)
    if isinstance(stmt, TryCatch):
        return free_identifiers(stmt.body) | (
            free_identifiers(stmt.handler) - {stmt.ident}
        )
    if isinstance(stmt, Raise):
        return frozenset({stmt.ident})
    if isinstance(stmt, CatchMarker):
        return free_identifiers(stmt.handler) - {stmt.ident}
    if isinstance(stmt, WaitVar):
        return frozenset({stmt.ident})
    raise TypeError(f"not a kernel statement: {stmt!r}")


def literal_free(lit: ValueLiteral) -> frozenset:
    if isinstance(lit, RecordLit):
        return frozenset(lit.features.values())
    if isinstance(lit, ProcLit):
        return frozenset(lit.free)
    return frozenset()


# ---------------------------------------------------------------------------
# Canonical serialization (used by snapshots and program digests)


def _feat_key(f: Feature) -> str:
    return str(f) if isinstance(f, int) else "a:" + f


def _feat_unkey(s: str) -> Feature:
    if s.startswith("a:"):
        return s[2:]
    return int(s)


def pattern_to_data(p: Pattern):
    if isinstance(p, LitPat):
        return {"p": "lit", "kind": p.kind, "value": p.value}
    if isinstance(p, CapturePat):
        return {"p": "cap", "ident": p.ident}
    if isinstance(p, RecordPat):
        return {
            "p": "rec",
            "label": p.label,
            "features": {_feat_key(f): pattern_to_data(sp) for f, sp in p.features.items()},
        }
    raise TypeError(f"not a pattern: {p!r}")


def pattern_from_data(d) -> Pattern:
    if d["p"] == "lit":
        v = d["value"]
        if d["kind"] == "float":
            v = float(v)
        elif d["kind"] == "bool":
            v = bool(v)
        elif d["kind"] == "int":
            v = int(v)
        return LitPat(d["kind"], v)
    if d["p"] == "cap":
        return CapturePat(d["ident"])
    if d["p"] == "rec":
        return RecordPat(
            d["label"],
            {_feat_unkey(k): pattern_from_data(v) for k, v in d["features"].items()},
        )
    raise ValueError(f"bad pattern data: {d!r}")


def literal_to_data(lit: ValueLiteral):
    if isinstance(lit, NumberLit):
        kind = "float" if isinstance(lit.value, float) else "int"
        return {"l": "num", "kind": kind, "value": lit.value}
    if isinstance(lit, BoolLit):
        return {"l": "bool", "value": lit.value}
    if isinstance(lit, AtomLit):
        return {"l": "atom", "name": lit.name}
    if isinstance(lit, RecordLit):
        return {
            "l": "rec",
            "label": lit.label,
            "features": {_feat_key(f): i for f, i in lit.features.items()},
        }
    if isinstance(lit, ProcLit):
        return {
            "l": "proc",
            "params": list(lit.params),
            "body": stmt_to_data(lit.body),
            "free": list(lit.free),
        }
    raise TypeError(f"not a literal: {lit!r}")


def literal_from_data(d) -> ValueLiteral:
    k = d["l"]
    if k == "num":
        return NumberLit(float(d["value"]) if d["kind"] == "float" else int(d["value"]))
    if k == "bool":
        return BoolLit(bool(d["value"]))
    if k == "atom":
        return AtomLit(d["name"])
    if k == "rec":
        return RecordLit(d["label"], {_feat_unkey(f): i for f, i in d["features"].items()})
    if k == "proc":
        return ProcLit(d["params"], stmt_from_data(d["body"]), tuple(d["free"]))
    raise ValueError(f"bad literal data: {d!r}")


def stmt_to_data(s: Statement):
    if isinstance(s, Skip):
        return {"s": "skip"}
    if isinstance(s, Seq):
        return {"s": "seq", "first": stmt_to_data(s.first), "second": stmt_to_data(s.second)}
    if isinstance(s, Local):
        return {"s": "local", "ident": s.ident, "body": stmt_to_data(s.body)}
    if isinstance(s, BindVarVar):
        return {"s": "bvv", "lhs": s.lhs, "rhs": s.rhs}
    if isinstance(s, BindValue):
        return {"s": "bval", "lhs": s.lhs, "literal": literal_to_data(s.literal)}
    if isinstance(s, Conditional):
        return {
            "s": "cond",
            "scrutinee": s.scrutinee,
            "then": stmt_to_data(s.then_body),
            "else": stmt_to_data(s.else_body),
        }
    if isinstance(s, Match):
        return {
            "s": "match",
            "scrutinee": s.scrutinee,
            "clauses": [[pattern_to_data(p), stmt_to_data(b)] for p, b in s.clauses],
            "else": None if s.else_body is None else stmt_to_data(s.else_body),
        }
    if isinstance(s, Apply):
        return {"s": "apply", "proc": s.proc, "args": list(s.args)}
    if isinstance(s, SpawnThread):
        return {"s": "spawn", "body": stmt_to_data(s.body)}
    if isinstance(s, TryCatch):
        return {
            "s": "try",
            "body": stmt_to_data(s.body),
            "ident": s.ident,
            "handler": stmt_to_data(s.handler),
        }
    if isinstance(s, Raise):
        return {"s": "raise", "ident": s.ident}
    if isinstance(s, CatchMarker):
        return {"s": "catchmark", "ident": s.ident, "handler": stmt_to_data(s.handler)}
    if isinstance(s, WaitVar):
        return {"s": "waitvar", "ident": s.ident}
    raise TypeError(f"not a kernel statement: {s!r}")


def stmt_from_data(d) -> Statement:
    k = d["s"]
    if k == "skip":
        return Skip()
    if k == "seq":
        return Seq(stmt_from_data(d["first"]), stmt_from_data(d["second"]))
    if k == "local":
        return Local(d["ident"], stmt_from_data(d["body"]))
    if k == "bvv":
        return BindVarVar(d["lhs"], d["rhs"])
    if k == "bval":
        return BindValue(d["lhs"], literal_from_data(d["literal"]))
    if k == "cond":
        return Conditional(d["scrutinee"], stmt_from_data(d["then"]), stmt_from_data(d["else"]))
    if k == "match":
        return Match(
            d["scrutinee"],
            [(pattern_from_data(p), stmt_from_data(b)) for p, b in d["clauses"]],
            None if d["else"] is None else stmt_from_data(d["else"]),
        )
    if k == "apply":
        return Apply(d["proc"], list(d["args"]))
    if k == "spawn":
        return SpawnThread(stmt_from_data(d["body"]))
    if k == "try":
        return TryCatch(stmt_from_data(d["body"]), d["ident"], stmt_from_data(d["handler"]))
    if k == "raise":
        return Raise(d["ident"])
    if k == "catchmark":
        return CatchMarker(d["ident"], stmt_from_data(d["handler"]))
    if k == "waitvar":
        return WaitVar(d["ident"])
    raise ValueError(f"bad statement data: {d!r}")


def seq_all(stmts: list) -> Statement:
    """Right-fold a statement list into nested Seq (Skip for empty)."""
    if not stmts:
        return Skip()
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out
