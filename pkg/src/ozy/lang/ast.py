"""Surface syntax tree.

Phrases are position-neutral: the same node can be a statement or an
expression depending on where it occurs (application, if, case, local).
The desugarer decides by position.  Source positions are carried for
error reporting but excluded from structural equality so that the
parse/print round-trip can be checked by plain ==.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class P:
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class PInt(P):
    value: int = 0


@dataclass(frozen=True)
class PFloat(P):
    value: float = 0.0


@dataclass(frozen=True)
class PBool(P):
    value: bool = False


@dataclass(frozen=True)
class PAtom(P):
    name: str = ""


@dataclass(frozen=True)
class PVar(P):
    name: str = ""


@dataclass(frozen=True)
class PDot(P):
    base: str = ""
    attr: str = ""


@dataclass(frozen=True)
class PRecord(P):
    label: str = ""
    fields: tuple = ()  # tuple of (feature | None, phrase); None = positional


@dataclass(frozen=True)
class PList(P):
    items: tuple = ()


@dataclass(frozen=True)
class PTuple(P):
    items: tuple = ()  # (A B) binding pattern


@dataclass(frozen=True)
class PApply(P):
    fn: object = None
    args: tuple = ()


@dataclass(frozen=True)
class PBinOp(P):
    op: str = ""
    left: object = None
    right: object = None


@dataclass(frozen=True)
class PSkip(P):
    pass


@dataclass(frozen=True)
class PSeq(P):
    items: tuple = ()


@dataclass(frozen=True)
class PLocal(P):
    names: tuple = ()
    body: PSeq = None


@dataclass(frozen=True)
class PBind(P):
    lhs: object = None
    rhs: object = None


@dataclass(frozen=True)
class PProc(P):
    name: str = ""
    params: tuple = ()  # tuple of (name, out_marker)
    decls: tuple = ()
    body: PSeq = None


@dataclass(frozen=True)
class PFun(P):
    name: str = ""
    params: tuple = ()
    decls: tuple = ()
    body: PSeq = None  # last item is the result expression
    lazy: bool = False


@dataclass(frozen=True)
class PThread(P):
    body: PSeq = None


@dataclass(frozen=True)
class PIf(P):
    cond: object = None
    then: PSeq = None
    els: Optional[PSeq] = None


@dataclass(frozen=True)
class PCase(P):
    scrutinee: object = None
    clauses: tuple = ()  # tuple of (pattern phrase, PSeq)
    els: Optional[PSeq] = None


@dataclass(frozen=True)
class PTry(P):
    body: PSeq = None
    ident: str = ""
    handler: PSeq = None


@dataclass(frozen=True)
class PRaise(P):
    expr: object = None
