"""Shared test helpers: term-graph generators, independent oracles, and
small driver utilities used by both the unit suites and the acceptance gate."""

from __future__ import annotations

import random

from ozy.machine import PARTIALLY_ACTIVE, create_process
from ozy.store import Determined, Failed, Store, Unbound
from ozy.values import Atom, Bool, Float, Int, Record

ATOMS = ["a", "b", "foo", "nil"]
LABELS = ["r", "pair", "|", "cset"]


# ---------------------------------------------------------------------------
# term graphs: explicit node lists so tests can build identical copies and
# reason about them independently of the store implementation


def random_term_graph(rng: random.Random, max_nodes=20):
    """A term graph: list of nodes; node = ('int', n) | ('float', x) |
    ('atom', s) | ('bool', b) | ('rec', label, [node indices]).
    Indices may point anywhere (cycles allowed). Node 0 is the root."""
    n = rng.randint(1, max_nodes)
    nodes = []
    for i in range(n):
        kind = rng.choice(["int", "atom", "rec", "rec", "float", "bool"])
        if kind == "int":
            nodes.append(("int", rng.randint(-3, 3)))
        elif kind == "float":
            nodes.append(("float", rng.choice([0.0, 1.5, -2.25])))
        elif kind == "bool":
            nodes.append(("bool", rng.random() < 0.5))
        elif kind == "atom":
            nodes.append(("atom", rng.choice(ATOMS)))
        else:
            width = rng.randint(0, 3)
            kids = [rng.randrange(n) for _ in range(width)]
            nodes.append(("rec", rng.choice(LABELS), kids))
    return nodes


def build_term(store: Store, nodes, root=0):
    """Materialize a term graph into the store; returns the root var id."""
    vars_ = [store.new_var() for _ in nodes]
    for vid, node in zip(vars_, nodes):
        if node[0] == "int":
            store.cells[vid] = Determined(Int(node[1]))
        elif node[0] == "float":
            store.cells[vid] = Determined(Float(node[1]))
        elif node[0] == "bool":
            store.cells[vid] = Determined(Bool(node[1]))
        elif node[0] == "atom":
            store.cells[vid] = Determined(Atom(node[1]))
        else:
            _, label, kids = node
            feats = {i + 1: vars_[k] for i, k in enumerate(kids)}
            store.cells[vid] = Determined(Record(label, feats))
    return vars_[root]


def graphs_bisimilar(a_nodes, a_root, b_nodes, b_root) -> bool:
    """Structural-equality oracle over term graphs (rational trees):
    coinductive comparison with a visited-pair set."""
    seen = set()

    def go(i, j):
        if (i, j) in seen:
            return True
        seen.add((i, j))
        na, nb = a_nodes[i], b_nodes[j]
        if na[0] != nb[0]:
            return False
        if na[0] in ("int", "atom", "bool"):
            return na[1] == nb[1]
        if na[0] == "float":
            return na[1] == nb[1]
        _, la, ka = na
        _, lb, kb = nb
        if la != lb or len(ka) != len(kb):
            return False
        return all(go(x, y) for x, y in zip(ka, kb))

    return go(a_root, b_root)


# ---------------------------------------------------------------------------
# free-identifier oracle: an independent brute-force walk over surface text
# is impractical, so the oracle works on kernel statements via substitution:
# ident I is free in S iff renaming I everywhere it is *used unbound* can be
# detected through the serialized form. We instead recompute the set with an
# explicitly environment-threaded interpreter-style walk.


def free_idents_oracle(stmt, bound=frozenset()):
    from ozy import kernel as k

    if isinstance(stmt, k.Skip):
        return set()
    if isinstance(stmt, k.Seq):
        return free_idents_oracle(stmt.first, bound) | free_idents_oracle(stmt.second, bound)
    if isinstance(stmt, k.Local):
        return free_idents_oracle(stmt.body, bound | {stmt.ident})
    if isinstance(stmt, k.BindVarVar):
        return {i for i in (stmt.lhs, stmt.rhs) if i not in bound}
    if isinstance(stmt, k.BindValue):
        out = {stmt.lhs} if stmt.lhs not in bound else set()
        lit = stmt.literal
        if isinstance(lit, k.RecordLit):
            out |= {i for i in lit.features.values() if i not in bound}
        elif isinstance(lit, k.ProcLit):
            out |= {i for i in lit.free if i not in bound}
        return out
    if isinstance(stmt, k.Conditional):
        out = {stmt.scrutinee} - bound
        return out | free_idents_oracle(stmt.then_body, bound) | free_idents_oracle(
            stmt.else_body, bound
        )
    if isinstance(stmt, k.Match):
        out = {stmt.scrutinee} - bound
        for pat, body in stmt.clauses:
            out |= free_idents_oracle(body, bound | set(k.pattern_captures(pat)))
        if stmt.else_body is not None:
            out |= free_idents_oracle(stmt.else_body, bound)
        return out
    if isinstance(stmt, k.Apply):
        out = {stmt.proc.split(".", 1)[0]} | set(stmt.args)
        return {i for i in out if i not in bound}
    if isinstance(stmt, k.SpawnThread):
        return free_idents_oracle(stmt.body, bound)
    if isinstance(stmt, k.TryCatch):
        return free_idents_oracle(stmt.body, bound) | free_idents_oracle(
            stmt.handler, bound | {stmt.ident}
        )
    if isinstance(stmt, k.Raise):
        return {stmt.ident} - bound
    raise TypeError(stmt)


# ---------------------------------------------------------------------------
# drivers


def run_to_quiescence(machine, budget=2000):
    while machine.classify_status() == PARTIALLY_ACTIVE:
        machine.run_slice(budget)
    return machine.status


def toplevel_snapshot(machine, idents):
    """Observable bindings of named top-level variables as jsonables
    ('unbound'/'failed' markers for non-determined ones)."""
    from ozy.connectors import ConversionError, value_to_jsonable

    out = {}
    for ident in sorted(idents):
        var = machine.toplevel_env[ident]
        root, state = machine.store.deref(var)
        if isinstance(state, Unbound):
            out[ident] = "<unbound>"
        elif isinstance(state, Failed):
            out[ident] = "<failed>"
        else:
            try:
                out[ident] = value_to_jsonable(machine.store, root)
            except ConversionError:
                out[ident] = "<partial>"
    return out


# ---------------------------------------------------------------------------
# random lifecycle programs: straight-line dataflow over top-level variables,
# some designated as external inputs bound by scripted messages


def random_lifecycle_program(rng: random.Random):
    """Returns (source, externals, message_script) where message_script is a
    list of (name, int) bindings delivered at quiescence."""
    n_vars = rng.randint(3, 6)
    names = [f"V{i}" for i in range(n_vars)]
    n_ext = rng.randint(1, max(1, n_vars - 2))
    externals = names[:n_ext]
    lines = []
    defined = list(externals)
    for name in names[n_ext:]:
        style = rng.random()
        if style < 0.3 or not defined:
            lines.append(f"thread {name} = {rng.randint(0, 9)} end")
        elif style < 0.8:
            a = rng.choice(defined)
            lines.append(f"thread {name} = {a} + {rng.randint(1, 5)} end")
        else:
            a, b = rng.choice(defined), rng.choice(defined)
            lines.append(f"thread {name} = {a} + {b} end")
        defined.append(name)
    # every external must be mentioned so it becomes a top-level variable
    lines.append("thread Sink = " + " + ".join(externals) + " end")
    script = [(name, rng.randint(0, 9)) for name in externals]
    rng.shuffle(script)
    return "\n".join(lines), externals, script
