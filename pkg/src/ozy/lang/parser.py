"""Recursive-descent parser producing the surface tree."""

from __future__ import annotations

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
from .lexer import Token, tokenize

CMP_OPS = ("==", "\\=", ">=", "=<", ">", "<")
SEQ_STOP = ("end", "else", "catch", "in", "then", "of", "[]")


class ParseError(Exception):
    def __init__(self, message, token: Token, expected=None):
        loc = f"{token.line}:{token.col}"
        detail = f"{loc}: {message}"
        if expected:
            detail += f" (expected one of: {', '.join(sorted(expected))})"
        super().__init__(detail)
        self.token = token
        self.expected = expected or []


class Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    # -- token helpers ---------------------------------------------------------

    def peek(self, ahead=0) -> Token:
        j = min(self.i + ahead, len(self.tokens) - 1)
        return self.tokens[j]

    def next(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at_kw(self, *kws) -> bool:
        t = self.peek()
        return t.kind == "kw" and t.value in kws

    def at_op(self, *ops) -> bool:
        t = self.peek()
        return t.kind == "op" and t.value in ops

    def expect_kw(self, kw) -> Token:
        if not self.at_kw(kw):
            raise ParseError(f"got {self.peek().text!r}", self.peek(), [kw])
        return self.next()

    def expect_op(self, op) -> Token:
        if not self.at_op(op):
            raise ParseError(f"got {self.peek().text!r}", self.peek(), [op])
        return self.next()

    def adjacent_lparen(self, prev: Token) -> bool:
        t = self.peek()
        return (
            t.kind == "op"
            and t.value == "("
            and t.line == prev.line
            and t.col == prev.col + len(prev.text)
        )

    # -- program ---------------------------------------------------------------

    def parse_program(self) -> PSeq:
        seq = self.parse_phrases(stop_eof=True)
        if self.peek().kind != "eof":
            raise ParseError(f"unexpected {self.peek().text!r}", self.peek())
        return seq

    def parse_phrases(self, stop_eof=False) -> PSeq:
        pos = self.peek().span
        items = []
        while True:
            t = self.peek()
            if t.kind == "eof":
                if stop_eof:
                    break
                raise ParseError("unexpected end of input", t, SEQ_STOP)
            if t.kind == "kw" and t.value in SEQ_STOP:
                break
            if t.kind == "op" and t.value in ("[]", ")", "}", "]"):
                break
            items.append(self.parse_phrase())
        return PSeq(pos, tuple(items))

    def parse_decls(self) -> tuple:
        """Tentatively parse `Var+ in`; returns () and rolls back on no match."""
        save = self.i
        names = []
        while self.peek().kind == "var":
            names.append(self.next().value)
        if names and self.at_kw("in"):
            self.next()
            return tuple(names)
        self.i = save
        return ()

    # -- phrases ---------------------------------------------------------------

    def parse_phrase(self):
        t = self.peek()
        if t.kind == "kw":
            if t.value == "skip":
                self.next()
                return PSkip(t.span)
            if t.value == "local":
                return self.parse_local()
            if t.value == "thread":
                self.next()
                body = self.parse_phrases()
                self.expect_kw("end")
                return PThread(t.span, body)
            if t.value in ("proc", "fun", "lazy"):
                return self.parse_proc_or_fun()
            if t.value == "if":
                return self.parse_if()
            if t.value == "case":
                return self.parse_case()
            if t.value == "try":
                return self.parse_try()
            if t.value == "raise":
                self.next()
                expr = self.parse_expr()
                self.expect_kw("end")
                return PRaise(t.span, expr)
            raise ParseError(f"unexpected keyword {t.value!r}", t)
        if t.kind == "var":
            nxt = self.peek(1)
            if nxt.kind == "op" and nxt.value == "=":
                self.next()
                self.next()
                rhs = self.parse_expr()
                return PBind(t.span, PVar(t.span, t.value), rhs)
            return self.parse_expr()
        if t.kind == "op" and t.value == "(":
            # tuple binding `(A B) = Expr`
            save = self.i
            try:
                self.next()
                names = []
                while self.peek().kind == "var":
                    names.append(self.next().value)
                if names and self.at_op(")") and self.peek(1).value == "=":
                    self.next()
                    self.next()
                    rhs = self.parse_expr()
                    return PBind(t.span, PTuple(t.span, tuple(names)), rhs)
            except ParseError:
                pass
            self.i = save
            return self.parse_expr()
        return self.parse_expr()

    def parse_local(self):
        t = self.expect_kw("local")
        names = []
        while self.peek().kind == "var":
            names.append(self.next().value)
        if not names:
            raise ParseError("local needs at least one variable", self.peek())
        self.expect_kw("in")
        body = self.parse_phrases()
        self.expect_kw("end")
        return PLocal(t.span, tuple(names), body)

    def parse_proc_or_fun(self):
        t = self.peek()
        lazy = False
        if self.at_kw("lazy"):
            self.next()
            lazy = True
            if not self.at_kw("fun"):
                raise ParseError("lazy applies to fun only", self.peek(), ["fun"])
        kind = self.next().value  # proc | fun
        self.expect_op("{")
        name_tok = self.next()
        if name_tok.kind != "var":
            raise ParseError("procedure name must be a variable", name_tok)
        params = []
        while not self.at_op("}"):
            out = False
            if self.at_op("?"):
                self.next()
                out = True
            ptok = self.next()
            if ptok.kind != "var":
                raise ParseError("parameter must be a variable", ptok)
            params.append((ptok.value, out))
        self.expect_op("}")
        decls = self.parse_decls()
        body = self.parse_phrases()
        self.expect_kw("end")
        if kind == "proc":
            if lazy:
                raise ParseError("lazy applies to fun only", t)
            return PProc(t.span, name_tok.value, tuple(params), decls, body)
        if not body.items:
            raise ParseError("fun body needs a result expression", self.peek())
        return PFun(t.span, name_tok.value, tuple(params), decls, body, lazy)

    def parse_if(self):
        t = self.expect_kw("if")
        cond = self.parse_expr()
        self.expect_kw("then")
        then = self.parse_phrases()
        els = None
        if self.at_kw("else"):
            self.next()
            els = self.parse_phrases()
        self.expect_kw("end")
        return PIf(t.span, cond, then, els)

    def parse_case(self):
        t = self.expect_kw("case")
        scrutinee = self.parse_expr()
        self.expect_kw("of")
        clauses = []
        while True:
            pat = self.parse_expr()
            self.expect_kw("then")
            body = self.parse_phrases()
            clauses.append((pat, body))
            if self.at_op("[]"):
                self.next()
                continue
            break
        els = None
        if self.at_kw("else"):
            self.next()
            els = self.parse_phrases()
        self.expect_kw("end")
        return PCase(t.span, scrutinee, tuple(clauses), els)

    def parse_try(self):
        t = self.expect_kw("try")
        body = self.parse_phrases()
        self.expect_kw("catch")
        ident = self.next()
        if ident.kind != "var":
            raise ParseError("catch variable expected", ident)
        self.expect_kw("then")
        handler = self.parse_phrases()
        self.expect_kw("end")
        return PTry(t.span, body, ident.value, handler)

    # -- expressions -----------------------------------------------------------

    def parse_expr(self):
        left = self.parse_pair()
        if self.at_op(*CMP_OPS):
            op = self.next().value
            right = self.parse_pair()
            return PBinOp(left.pos, op, left, right)
        return left

    def parse_pair(self):
        # n-ary '#': a#b#c is one tuple
        first = self.parse_cons()
        if not self.at_op("#"):
            return first
        items = [first]
        while self.at_op("#"):
            self.next()
            items.append(self.parse_cons())
        rec = PRecord(first.pos, "#", tuple((None, x) for x in items))
        return rec

    def parse_cons(self):
        head = self.parse_additive()
        if self.at_op("|"):
            self.next()
            tail = self.parse_cons()
            return PBinOp(head.pos, "|", head, tail)
        return head

    def parse_additive(self):
        left = self.parse_mult()
        while self.at_op("+", "-"):
            op = self.next().value
            right = self.parse_mult()
            left = PBinOp(left.pos, op, left, right)
        return left

    def parse_mult(self):
        left = self.parse_primary()
        while self.at_op("*", "/") or self._at_word_op():
            op = self.next().value
            right = self.parse_primary()
            left = PBinOp(left.pos, op, left, right)
        return left

    def _at_word_op(self):
        t = self.peek()
        return t.kind == "atom" and t.value in ("div", "mod")

    def parse_primary(self):
        t = self.peek()
        if t.kind == "int":
            self.next()
            return PInt(t.span, t.value)
        if t.kind == "float":
            self.next()
            return PFloat(t.span, t.value)
        if t.kind == "bool":
            self.next()
            return PBool(t.span, t.value)
        if t.kind == "atom":
            self.next()
            if self.adjacent_lparen(t):
                return self.parse_record_fields(t.span, t.value)
            return PAtom(t.span, t.value)
        if t.kind == "var":
            self.next()
            if self.at_op(".") and self.peek(1).kind == "atom":
                self.next()
                attr = self.next()
                return PDot(t.span, t.value, attr.value)
            return PVar(t.span, t.value)
        if t.kind == "op" and t.value == "{":
            self.next()
            fn = self.parse_primary()
            if not isinstance(fn, (PVar, PDot)):
                raise ParseError("application target must be a name", t)
            args = []
            while not self.at_op("}"):
                args.append(self.parse_expr())
            self.expect_op("}")
            return PApply(t.span, fn, tuple(args))
        if t.kind == "op" and t.value == "(":
            self.next()
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if t.kind == "op" and t.value == "[":
            self.next()
            items = []
            while not self.at_op("]"):
                items.append(self.parse_expr())
            self.expect_op("]")
            return PList(t.span, tuple(items))
        if t.kind == "kw" and t.value in ("if", "case", "local", "thread", "try"):
            return self.parse_phrase()
        raise ParseError(f"unexpected {t.text!r}", t, ["expression"])

    def parse_record_fields(self, pos, label):
        self.expect_op("(")
        fields = []
        while not self.at_op(")"):
            t = self.peek()
            nxt = self.peek(1)
            if t.kind in ("atom", "int") and nxt.kind == "op" and nxt.value == ":":
                self.next()
                self.next()
                value = self.parse_expr()
                fields.append((t.value, value))
            else:
                fields.append((None, self.parse_expr()))
        self.expect_op(")")
        return PRecord(pos, label, tuple(fields))


def parse(source: str) -> PSeq:
    """Tokenize and parse a whole program (a phrase sequence)."""
    return Parser(tokenize(source)).parse_program()
