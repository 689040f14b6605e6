"""Runtime values for the orchestration kernel.

The value universe is deliberately small: numbers, atoms, booleans,
records (lists are just records), procedure closures and references to
host built-ins.  Record features are atoms or positive integers, kept in
canonical order (integers ascending, then atoms lexicographic) so that
printing and serialization are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

Feature = Union[int, str]

CONS_LABEL = "|"
NIL = "nil"
PAIR_LABEL = "#"


def feature_sort_key(f: Feature):
    # integers first (ascending), then atoms lexicographic
    if isinstance(f, bool):
        raise TypeError("booleans are not record features")
    if isinstance(f, int):
        return (0, f, "")
    return (1, 0, f)


def canonical_features(features: dict) -> dict:
    return {f: features[f] for f in sorted(features, key=feature_sort_key)}


@dataclass(frozen=True)
class Int:
    n: int


@dataclass(frozen=True)
class Float:
    x: float


@dataclass(frozen=True)
class Bool:
    b: bool


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass
class Record:
    """A record value; features map to store variables (var ids)."""

    label: str
    features: dict  # Feature -> var id (int)

    def __post_init__(self):
        self.features = canonical_features(self.features)

    def arity(self):
        return tuple(self.features.keys())


@dataclass
class Closure:
    """A procedure value: parameters, kernel body and captured environment."""

    params: list  # list of identifier names
    body: "object"  # KernelStatement
    env: dict  # identifier -> var id

    def __post_init__(self):
        self.env = {k: self.env[k] for k in sorted(self.env)}


@dataclass(frozen=True)
class BuiltinRef:
    name: str


Value = Union[Int, Float, Bool, Atom, Record, Closure, BuiltinRef]


def is_cons(v: Value) -> bool:
    return isinstance(v, Record) and v.label == CONS_LABEL and v.arity() == (1, 2)


def is_nil(v: Value) -> bool:
    return isinstance(v, Atom) and v.name == NIL


def atom_needs_quotes(name: str) -> bool:
    if not name:
        return True
    if not name[0].islower():
        return True
    return not all(c.isalnum() or c == "_" for c in name)


def format_atom(name: str) -> str:
    if atom_needs_quotes(name):
        return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"
    return name
