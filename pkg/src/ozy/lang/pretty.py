"""Pretty-printer for surface trees; output re-parses to the same tree."""

from __future__ import annotations

from ..values import format_atom
from .ast import (
    PApply,
    PAtom,
    PBinOp,
    PBind,
    PBool,
    PCase,
    PDot,
    PFloat,
    PFun,
    PIf,
    PInt,
    PList,
    PLocal,
    PProc,
    PRaise,
    PRecord,
    PSeq,
    PSkip,
    PThread,
    PTry,
    PTuple,
    PVar,
)

_PREC = {"cmp": 1, "#": 2, "|": 3, "+": 4, "-": 4, "*": 5, "/": 5, "div": 5, "mod": 5}
_CMP = ("==", "\\=", ">=", "=<", ">", "<")


def pretty(node, indent=0) -> str:
    pad = "  " * indent
    if isinstance(node, PSeq):
        return "\n".join(pretty(item, indent) for item in node.items)
    if isinstance(node, PSkip):
        return pad + "skip"
    if isinstance(node, PBind):
        return pad + f"{_expr(node.lhs)} = {_expr(node.rhs)}"
    if isinstance(node, PLocal):
        body = pretty(node.body, indent + 1)
        return pad + "local " + " ".join(node.names) + " in\n" + body + "\n" + pad + "end"
    if isinstance(node, PThread):
        return pad + "thread\n" + pretty(node.body, indent + 1) + "\n" + pad + "end"
    if isinstance(node, PProc):
        header = pad + "proc {" + " ".join([node.name] + [_param(p) for p in node.params]) + "}"
        if node.decls:
            header += " " + " ".join(node.decls) + " in"
        return header + "\n" + pretty(node.body, indent + 1) + "\n" + pad + "end"
    if isinstance(node, PFun):
        kw = "lazy fun" if node.lazy else "fun"
        header = pad + kw + " {" + " ".join([node.name] + [_param(p) for p in node.params]) + "}"
        if node.decls:
            header += " " + " ".join(node.decls) + " in"
        return header + "\n" + pretty(node.body, indent + 1) + "\n" + pad + "end"
    if isinstance(node, PIf):
        out = pad + "if " + _expr(node.cond) + " then\n" + pretty(node.then, indent + 1)
        if node.els is not None:
            out += "\n" + pad + "else\n" + pretty(node.els, indent + 1)
        return out + "\n" + pad + "end"
    if isinstance(node, PCase):
        out = pad + "case " + _expr(node.scrutinee) + " of"
        first = True
        for pat, body in node.clauses:
            sep = " " if first else "\n" + pad + "[] "
            out += sep + _expr(pat) + " then\n" + pretty(body, indent + 1)
            first = False
        if node.els is not None:
            out += "\n" + pad + "else\n" + pretty(node.els, indent + 1)
        return out + "\n" + pad + "end"
    if isinstance(node, PTry):
        return (
            pad + "try\n" + pretty(node.body, indent + 1)
            + "\n" + pad + "catch " + node.ident + " then\n"
            + pretty(node.handler, indent + 1) + "\n" + pad + "end"
        )
    if isinstance(node, PRaise):
        return pad + "raise " + _expr(node.expr) + " end"
    return pad + _expr(node)


def _param(p) -> str:
    name, out = p
    return ("?" if out else "") + name


def _expr(node, parent_prec=0) -> str:
    if isinstance(node, PInt):
        return str(node.value)
    if isinstance(node, PFloat):
        return repr(node.value)
    if isinstance(node, PBool):
        return "true" if node.value else "false"
    if isinstance(node, PAtom):
        return format_atom(node.name)
    if isinstance(node, PVar):
        return node.name
    if isinstance(node, PDot):
        return f"{node.base}.{node.attr}"
    if isinstance(node, PTuple):
        return "(" + " ".join(node.items) + ")"
    if isinstance(node, PList):
        return "[" + " ".join(_expr(i) for i in node.items) + "]"
    if isinstance(node, PRecord):
        if node.label == "#" and all(f is None for f, _ in node.fields):
            prec = _PREC["#"]
            inner = "#".join(_expr(v, prec) for _, v in node.fields)
            return f"({inner})" if parent_prec >= prec else inner
        parts = []
        for feat, value in node.fields:
            if feat is None:
                parts.append(_expr(value))
            else:
                fs = str(feat) if isinstance(feat, int) else format_atom(feat)
                parts.append(f"{fs}:{_expr(value)}")
        return format_atom(node.label) + "(" + " ".join(parts) + ")"
    if isinstance(node, PApply):
        return "{" + " ".join([_expr(node.fn)] + [_expr(a) for a in node.args]) + "}"
    if isinstance(node, PBinOp):
        prec = _PREC["cmp"] if node.op in _CMP else _PREC[node.op]
        if node.op in _CMP:
            # comparisons don't chain; parenthesize nested comparisons
            out = _expr(node.left, prec) + " " + node.op + " " + _expr(node.right, prec)
        elif node.op == "|":
            out = _expr(node.left, prec) + node.op + _expr(node.right, prec - 1)
        else:
            out = _expr(node.left, prec - 1) + " " + node.op + " " + _expr(node.right, prec)
        return f"({out})" if parent_prec >= prec else out
    if isinstance(node, (PIf, PCase, PLocal, PThread)):
        return pretty(node)
    raise TypeError(f"cannot print {node!r}")
