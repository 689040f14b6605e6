"""Desugar surface trees into kernel statements.

Expression forms flatten through fresh temporaries; funs become procs with
an extra result parameter; cons and nil become records; operators become
built-in applies.  Identifiers free at the top level of a program become
implicit top-level variables (the listings rely on this: `thread X = 5 end`
never declares X); inside a strict desugar they are an error instead.
"""

from __future__ import annotations

from .. import kernel as k
from ..machine import BUILTIN_NAMES
from . import ast as a


class DesugarError(Exception):
    def __init__(self, message, pos=(0, 0)):
        super().__init__(f"{pos[0]}:{pos[1]}: {message}")
        self.pos = pos


class Scope:
    def __init__(self, implicit_toplevel=True):
        self.frames = [set()]
        self.toplevel: set = set()
        self.implicit_toplevel = implicit_toplevel
        self._fresh = 0

    def push(self, names=()):
        self.frames.append(set(names))

    def pop(self):
        self.frames.pop()

    def declare(self, name):
        self.frames[-1].add(name)

    def fresh(self) -> str:
        self._fresh += 1
        return f"_T{self._fresh}"

    def resolve(self, name, pos):
        for frame in reversed(self.frames):
            if name in frame:
                return
        if name in self.toplevel or name in BUILTIN_NAMES:
            return
        if self.implicit_toplevel:
            self.toplevel.add(name)
            return
        raise DesugarError(f"unbound identifier {name}", pos)


def desugar_program(tree: a.PSeq, implicit_toplevel=True):
    """Returns (kernel statement, implicit top-level identifier set)."""
    scope = Scope(implicit_toplevel)
    stmt = _stmts(tree, scope)
    return stmt, frozenset(scope.toplevel)


# ---------------------------------------------------------------------------
# statements


def _stmts(seq: a.PSeq, scope) -> k.Statement:
    return k.seq_all([_stmt(p, scope) for p in seq.items])


def _stmt(p, scope) -> k.Statement:
    if isinstance(p, a.PSkip):
        return k.Skip()
    if isinstance(p, a.PSeq):
        return _stmts(p, scope)
    if isinstance(p, a.PLocal):
        scope.push(p.names)
        body = _stmts(p.body, scope)
        scope.pop()
        for name in reversed(p.names):
            body = k.Local(name, body)
        return body
    if isinstance(p, a.PBind):
        return _bind(p, scope)
    if isinstance(p, a.PProc):
        scope.resolve(p.name, p.pos)
        lit = _proc_literal([n for n, _ in p.params], p.decls, p.body, scope,
                            result=None, pos=p.pos)
        return k.BindValue(p.name, lit)
    if isinstance(p, a.PFun):
        scope.resolve(p.name, p.pos)
        lit = _fun_literal(p, scope)
        return k.BindValue(p.name, lit)
    if isinstance(p, a.PThread):
        return k.SpawnThread(_stmts(p.body, scope))
    if isinstance(p, a.PIf):
        return _hoist(p.cond, scope, lambda c: k.Conditional(
            c,
            _branch_stmts(p.then, scope),
            _branch_stmts(p.els, scope) if p.els is not None else k.Skip(),
        ))
    if isinstance(p, a.PCase):
        return _case(p, scope, target=None)
    if isinstance(p, a.PTry):
        body = _stmts(p.body, scope)
        scope.push([p.ident])
        handler = _stmts(p.handler, scope)
        scope.pop()
        return k.TryCatch(body, p.ident, handler)
    if isinstance(p, a.PRaise):
        return _hoist(p.expr, scope, k.Raise)
    if isinstance(p, a.PApply):
        return _apply(p, scope, target=None)
    raise DesugarError(f"{type(p).__name__} is not a statement", p.pos)


def _branch_stmts(seq, scope) -> k.Statement:
    return _stmts(seq, scope)


def _bind(p: a.PBind, scope) -> k.Statement:
    lhs = p.lhs
    if isinstance(lhs, a.PVar):
        scope.resolve(lhs.name, lhs.pos)
        if isinstance(p.rhs, a.PVar):
            scope.resolve(p.rhs.name, p.rhs.pos)
            return k.BindVarVar(lhs.name, p.rhs.name)
        return _expr(p.rhs, scope, lhs.name)
    if isinstance(lhs, a.PTuple):
        # (A B) = Expr  ==  unify a fresh '#'-tuple of A,B against Expr
        for name in lhs.items:
            scope.resolve(name, lhs.pos)
        t1 = scope.fresh()
        t2 = scope.fresh()
        scope.push([t1, t2])
        rhs = _expr(p.rhs, scope, t1)
        lit = k.RecordLit("#", {i + 1: name for i, name in enumerate(lhs.items)})
        scope.pop()
        return k.Local(t1, k.Seq(rhs, k.Local(t2, k.Seq(
            k.BindValue(t2, lit), k.BindVarVar(t2, t1)))))
    raise DesugarError("bad binding target", p.pos)


# ---------------------------------------------------------------------------
# expressions (bind the value of phrase p to target identifier)


def _hoist(p, scope, build) -> k.Statement:
    """Evaluate p into a fresh temp (unless it is already a variable) and
    build a statement from the identifier."""
    if isinstance(p, a.PVar):
        scope.resolve(p.name, p.pos)
        return build(p.name)
    t = scope.fresh()
    scope.push([t])
    evaled = _expr(p, scope, t)
    inner = build(t)
    scope.pop()
    return k.Local(t, k.Seq(evaled, inner))


def _hoist_many(phrases, scope, build) -> k.Statement:
    idents = []
    out = None

    def rec(index):
        if index == len(phrases):
            return build(list(idents))
        p = phrases[index]
        if isinstance(p, a.PVar):
            scope.resolve(p.name, p.pos)
            idents.append(p.name)
            return rec(index + 1)
        t = scope.fresh()
        scope.push([t])
        evaled = _expr(p, scope, t)
        idents.append(t)
        inner = rec(index + 1)
        scope.pop()
        return k.Local(t, k.Seq(evaled, inner))

    return rec(0)


def _expr(p, scope, target: str) -> k.Statement:
    if isinstance(p, a.PVar):
        scope.resolve(p.name, p.pos)
        return k.BindVarVar(target, p.name)
    if isinstance(p, a.PInt):
        return k.BindValue(target, k.NumberLit(p.value))
    if isinstance(p, a.PFloat):
        return k.BindValue(target, k.NumberLit(p.value))
    if isinstance(p, a.PBool):
        return k.BindValue(target, k.BoolLit(p.value))
    if isinstance(p, a.PAtom):
        return k.BindValue(target, k.AtomLit(p.name))
    if isinstance(p, a.PRecord):
        feats, values = _record_parts(p)
        return _hoist_many(values, scope, lambda idents: k.BindValue(
            target, k.RecordLit(p.label, dict(zip(feats, idents)))))
    if isinstance(p, a.PList):
        # [a b c] -> a|b|c|nil
        expanded = a.PAtom(p.pos, "nil")
        for item in reversed(p.items):
            expanded = a.PBinOp(p.pos, "|", item, expanded)
        return _expr(expanded, scope, target)
    if isinstance(p, a.PBinOp):
        if p.op == "|":
            return _hoist_many([p.left, p.right], scope, lambda idents: k.BindValue(
                target, k.RecordLit("|", {1: idents[0], 2: idents[1]})))
        return _hoist_many([p.left, p.right], scope, lambda idents: k.Apply(
            p.op, idents + [target]))
    if isinstance(p, a.PApply):
        return _apply(p, scope, target)
    if isinstance(p, a.PDot):
        # module attribute in value position: zero-argument connector call
        return k.Apply(f"{p.base}.{p.attr}", [target])
    if isinstance(p, a.PIf):
        if p.els is None:
            raise DesugarError("if-expression needs an else branch", p.pos)
        return _hoist(p.cond, scope, lambda c: k.Conditional(
            c, _seq_expr(p.then, scope, target), _seq_expr(p.els, scope, target)))
    if isinstance(p, a.PCase):
        return _case(p, scope, target)
    if isinstance(p, a.PLocal):
        scope.push(p.names)
        body = _seq_expr(p.body, scope, target)
        scope.pop()
        for name in reversed(p.names):
            body = k.Local(name, body)
        return body
    raise DesugarError(f"{type(p).__name__} is not an expression", p.pos)


def _seq_expr(seq: a.PSeq, scope, target) -> k.Statement:
    """A body whose last phrase is the result expression."""
    if not seq.items:
        raise DesugarError("empty expression body", seq.pos)
    stmts = [_stmt(p, scope) for p in seq.items[:-1]]
    stmts.append(_expr(seq.items[-1], scope, target))
    return k.seq_all(stmts)


def _record_parts(p: a.PRecord):
    feats = []
    values = []
    position = 1
    for feat, value in p.fields:
        if feat is None:
            feats.append(position)
            position += 1
        else:
            feats.append(feat)
        values.append(value)
    if len(set(feats)) != len(feats):
        raise DesugarError("duplicate record feature", p.pos)
    return feats, values


def _apply(p: a.PApply, scope, target) -> k.Statement:
    if isinstance(p.fn, a.PDot):
        name = f"{p.fn.base}.{p.fn.attr}"
    else:
        scope.resolve(p.fn.name, p.fn.pos)
        name = p.fn.name
    extra = [] if target is None else [target]
    return _hoist_many(list(p.args), scope, lambda idents: k.Apply(name, idents + extra))


def _case(p: a.PCase, scope, target) -> k.Statement:
    def build(scrut):
        clauses = []
        for pat_phrase, body in p.clauses:
            pat = _pattern(pat_phrase)
            captures = k.pattern_captures(pat)
            if len(set(captures)) != len(captures):
                raise DesugarError("duplicate capture in pattern", pat_phrase.pos)
            scope.push(captures)
            kbody = _stmts(body, scope) if target is None else _seq_expr(body, scope, target)
            scope.pop()
            clauses.append((pat, kbody))
        if p.els is not None:
            els = _stmts(p.els, scope) if target is None else _seq_expr(p.els, scope, target)
        else:
            e = scope.fresh()
            els = k.Local(e, k.Seq(
                k.BindValue(e, k.RecordLit("noMatch", {1: scrut})), k.Raise(e)))
        return k.Match(scrut, clauses, els)

    return _hoist(p.scrutinee, scope, build)


def _pattern(p) -> k.Pattern:
    if isinstance(p, a.PInt):
        return k.LitPat("int", p.value)
    if isinstance(p, a.PFloat):
        return k.LitPat("float", p.value)
    if isinstance(p, a.PBool):
        return k.LitPat("bool", p.value)
    if isinstance(p, a.PAtom):
        return k.LitPat("atom", p.name)
    if isinstance(p, a.PVar):
        return k.CapturePat(p.name)
    if isinstance(p, a.PBinOp) and p.op == "|":
        return k.RecordPat("|", {1: _pattern(p.left), 2: _pattern(p.right)})
    if isinstance(p, a.PRecord):
        feats, values = _record_parts(p)
        return k.RecordPat(p.label, dict(zip(feats, [_pattern(v) for v in values])))
    if isinstance(p, a.PList):
        pat = k.LitPat("atom", "nil")
        for item in reversed(p.items):
            pat = k.RecordPat("|", {1: _pattern(item), 2: pat})
        return pat
    raise DesugarError(f"{type(p).__name__} is not a pattern", p.pos)


# ---------------------------------------------------------------------------
# procedures


def _proc_literal(params, decls, body, scope, result, pos) -> k.ProcLit:
    all_params = list(params) + ([result] if result else [])
    scope.push(all_params)
    scope.push(decls)
    if result:
        kbody = _seq_expr(body, scope, result)
    else:
        kbody = _stmts(body, scope)
    scope.pop()
    scope.pop()
    for name in reversed(decls):
        kbody = k.Local(name, kbody)
    free = k.free_identifiers(kbody) - set(all_params)
    return k.ProcLit(all_params, kbody, tuple(sorted(free)))


def _fun_literal(p: a.PFun, scope) -> k.ProcLit:
    params = [n for n, _ in p.params]
    result = "_Res"
    lit = _proc_literal(params, p.decls, p.body, scope, result, p.pos)
    if not p.lazy:
        return lit
    # lazy fun: the result gets a by-need trigger that runs the body on demand
    inner_free = k.free_identifiers(lit.body) - {result}
    inner = k.ProcLit(lit.params[-1:], lit.body, tuple(sorted(inner_free)))
    c = "_Thunk"
    body = k.Local(c, k.Seq(k.BindValue(c, inner), k.Apply("$ByNeed", [c, result])))
    free = k.free_identifiers(body) - set(lit.params)
    return k.ProcLit(lit.params, body, tuple(sorted(free)))
