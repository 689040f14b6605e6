"""Surface language front end: tokenize, parse, desugar, pretty-print."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .. import kernel as k
from .desugar import DesugarError, desugar_program
from .lexer import LexError, tokenize
from .parser import ParseError, parse
from .pretty import pretty

__all__ = [
    "tokenize",
    "parse",
    "pretty",
    "desugar_program",
    "load_program",
    "Program",
    "LexError",
    "ParseError",
    "DesugarError",
    "format_error",
]


@dataclass
class Program:
    """A compiled program: kernel statement plus its top-level variables."""

    name: str
    statement: k.Statement
    toplevel: frozenset
    digest: str


def load_program(source: str, name="<inline>") -> Program:
    tree = parse(source)
    stmt, toplevel = desugar_program(tree)
    canon = json.dumps(
        {"stmt": k.stmt_to_data(stmt), "toplevel": sorted(toplevel)},
        sort_keys=True,
        separators=(",", ":"),
    )
    digest = hashlib.sha256(canon.encode()).hexdigest()
    return Program(name, stmt, toplevel, digest)


def format_error(origin: str, err: Exception) -> str:
    """One-line `file:line:col: message` error rendering."""
    return f"{origin}:{err}"
