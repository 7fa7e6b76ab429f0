"""Labeled core-language syntax: terms, atoms, formulas, programs.

Every atomic formula or atomic program statement carries a tuple of labels
(usually one; cut resolution can cross-reference an atom under several).
All values are immutable; the only stateful object is LabelAllocator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence, Union


class SyntaxError_(Exception):
    """Parse or construction error, with 1-based line/column when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{line}:{col}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class DiffVar:
    """Differential symbol x' of a base variable."""

    base: str

    @property
    def name(self) -> str:
        return self.base + "'"


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class BinTerm:
    op: str  # one of + - * /
    left: Term
    right: Term


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Dif:
    """Syntactic differential (e)' applied to a term.

    Only the differential-axiom leaf rules ever build these; ordinary terms
    produced by the parser contain differential symbols, not Dif nodes.
    """

    sub: Term


Term = Union[Var, DiffVar, Const, BinTerm, Func, Dif]


def const(v: int | str | Fraction) -> Const:
    return Const(Fraction(v))


def neg(t: Term) -> Term:
    """Unary minus is not a term form: -e is written 0 - e."""
    return BinTerm("-", Const(Fraction(0)), t)


# ---------------------------------------------------------------------------
# Atoms

CMP_OPS = ("=", ">=", ">", "<=", "<")


@dataclass(frozen=True)
class TruthAtom:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class PredApp:
    name: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class AssignAtom:
    """x := e; var may be a differential symbol name like "x'"."""

    var: str
    rhs: Term


@dataclass(frozen=True)
class RandomAssignAtom:
    var: str


@dataclass(frozen=True)
class OdeAtom:
    """Bare differential equation var' = rhs, without domain constraint."""

    var: str  # base variable name
    rhs: Term


Atom = Union[TruthAtom, Cmp, PredApp, AssignAtom, RandomAssignAtom, OdeAtom]

FORMULA_ATOMS = (TruthAtom, Cmp, PredApp)
PROGRAM_ATOMS = (AssignAtom, RandomAssignAtom, OdeAtom)


# ---------------------------------------------------------------------------
# Labels


import itertools as _itertools
import threading as _threading

_UID_LOCK = _threading.Lock()
_UID_COUNTER = _itertools.count()


def _next_uid() -> int:
    with _UID_LOCK:
        return next(_UID_COUNTER)


class Label:
    """Opaque unique token; equality and hashing are by allocation id.

    Ids are process-global, so labels from different allocators never
    collide.
    """

    __slots__ = ("uid", "origin", "name")

    def __init__(self, uid: int, origin: str, name: str):
        self.uid = uid
        self.origin = origin  # 'model' or 'fresh'
        self.name = name

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Label) and other.uid == self.uid

    def __hash__(self) -> int:
        return hash(self.uid)

    def __repr__(self) -> str:
        return f"Label({self.name})"


class LabelAllocator:
    """Hands out labels with unique display names (ids are global)."""

    def __init__(self) -> None:
        self._fresh_counter = 0
        self._auto_counter = 0
        self._used_names: set[str] = set()
        self._lock = _threading.Lock()

    def named(self, name: str, origin: str = "model") -> Label:
        with self._lock:
            if name in self._used_names:
                raise SyntaxError_(f"duplicate explicit label '@{name}'")
            self._used_names.add(name)
        return Label(_next_uid(), origin, name)

    def _generated(self, prefix: str, origin: str) -> Label:
        with self._lock:
            while True:
                if prefix == "u":
                    self._fresh_counter += 1
                    name = f"u{self._fresh_counter}"
                else:
                    self._auto_counter += 1
                    name = f"a{self._auto_counter}"
                if name not in self._used_names:
                    break
            self._used_names.add(name)
        return Label(_next_uid(), origin, name)

    def reserve_names(self, names: Iterable[str]) -> None:
        """Mark display names as taken (labels minted elsewhere)."""
        with self._lock:
            self._used_names.update(names)

    def auto(self) -> Label:
        """Model-origin label for an atom without an explicit annotation."""
        return self._generated("a", "model")

    def fresh(self) -> Label:
        """Fresh label, printed u1, u2, ... (cut atoms, ghosts)."""
        return self._generated("u", "fresh")

    def fork(self, block: int = 4096) -> "LabelAllocator":
        """Reserve a disjoint fresh-name range for a concurrent branch."""
        child = LabelAllocator()
        with self._lock:
            child._fresh_counter = self._fresh_counter + block
            child._auto_counter = self._auto_counter + block
            child._used_names = self._used_names
            child._lock = self._lock
            self._fresh_counter += block
            self._auto_counter += block
        return child


Labels = tuple[Label, ...]


# ---------------------------------------------------------------------------
# Formulas and programs


@dataclass(frozen=True)
class FAtom:
    atom: Atom
    labels: Labels


@dataclass(frozen=True)
class Not:
    sub: Fml


@dataclass(frozen=True)
class BinFml:
    op: str  # && || -> <->
    left: Fml
    right: Fml


@dataclass(frozen=True)
class Quant:
    kind: str  # forall | exists
    var: str
    sub: Fml


@dataclass(frozen=True)
class Modal:
    kind: str  # box | dia
    prog: Stmt
    sub: Fml


Fml = Union[FAtom, Not, BinFml, Quant, Modal]


@dataclass(frozen=True)
class SAtom:
    atom: Atom  # AssignAtom | RandomAssignAtom | OdeAtom
    labels: Labels


@dataclass(frozen=True)
class Test:
    cond: Fml


@dataclass(frozen=True)
class Seq:
    left: Stmt
    right: Stmt


@dataclass(frozen=True)
class Choice:
    left: Stmt
    right: Stmt


@dataclass(frozen=True)
class Star:
    sub: Stmt


@dataclass(frozen=True)
class OdeSystem:
    eqs: tuple[SAtom, ...]  # every SAtom holds an OdeAtom
    domain: Fml


Stmt = Union[SAtom, Test, Seq, Choice, Star, OdeSystem]

Node = Union[Fml, Stmt]


# ---------------------------------------------------------------------------
# Traversal helpers


def atoms_of(node: Node) -> list[tuple[Labels, Atom]]:
    """Pre-order list of labeled atom occurrences."""
    out: list[tuple[Labels, Atom]] = []

    def walk(n: Node) -> None:
        if isinstance(n, (FAtom, SAtom)):
            out.append((n.labels, n.atom))
        elif isinstance(n, Not):
            walk(n.sub)
        elif isinstance(n, BinFml):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Quant):
            walk(n.sub)
        elif isinstance(n, Modal):
            walk(n.prog)
            walk(n.sub)
        elif isinstance(n, Test):
            walk(n.cond)
        elif isinstance(n, (Seq, Choice)):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Star):
            walk(n.sub)
        elif isinstance(n, OdeSystem):
            for eq in n.eqs:
                walk(eq)
            walk(n.domain)
        else:  # pragma: no cover
            raise TypeError(f"unknown node {n!r}")

    walk(node)
    return out


def labels_of(node: Node) -> set[Label]:
    out: set[Label] = set()
    for labels, _ in atoms_of(node):
        out.update(labels)
    return out


def map_atoms(node: Node, fn) -> Node:
    """Rebuild a tree, replacing each FAtom/SAtom by fn(leaf)."""
    if isinstance(node, (FAtom, SAtom)):
        return fn(node)
    if isinstance(node, Not):
        return Not(map_atoms(node.sub, fn))
    if isinstance(node, BinFml):
        return BinFml(node.op, map_atoms(node.left, fn), map_atoms(node.right, fn))
    if isinstance(node, Quant):
        return Quant(node.kind, node.var, map_atoms(node.sub, fn))
    if isinstance(node, Modal):
        return Modal(node.kind, map_atoms(node.prog, fn), map_atoms(node.sub, fn))
    if isinstance(node, Test):
        return Test(map_atoms(node.cond, fn))
    if isinstance(node, Seq):
        return Seq(map_atoms(node.left, fn), map_atoms(node.right, fn))
    if isinstance(node, Choice):
        return Choice(map_atoms(node.left, fn), map_atoms(node.right, fn))
    if isinstance(node, Star):
        return Star(map_atoms(node.sub, fn))
    if isinstance(node, OdeSystem):
        return OdeSystem(
            tuple(map_atoms(eq, fn) for eq in node.eqs), map_atoms(node.domain, fn)
        )
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Structural equality modulo labels


def strip_labels(node: Node):
    """Label-free structural skeleton, usable as a comparison/hash key."""
    if isinstance(node, (FAtom, SAtom)):
        return ("atom", node.atom)
    if isinstance(node, Not):
        return ("!", strip_labels(node.sub))
    if isinstance(node, BinFml):
        return (node.op, strip_labels(node.left), strip_labels(node.right))
    if isinstance(node, Quant):
        return (node.kind, node.var, strip_labels(node.sub))
    if isinstance(node, Modal):
        return (node.kind, strip_labels(node.prog), strip_labels(node.sub))
    if isinstance(node, Test):
        return ("?", strip_labels(node.cond))
    if isinstance(node, Seq):
        return (";", strip_labels(node.left), strip_labels(node.right))
    if isinstance(node, Choice):
        return ("++", strip_labels(node.left), strip_labels(node.right))
    if isinstance(node, Star):
        return ("*", strip_labels(node.sub))
    if isinstance(node, OdeSystem):
        return (
            "ode",
            tuple(strip_labels(eq) for eq in node.eqs),
            strip_labels(node.domain),
        )
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


def syntactically_equal(a: Atom, b: Atom) -> bool:
    """Structural atom equality; rationals compare reduced, nothing commutes."""
    return a == b


def equal_mod_labels(a: Node, b: Node) -> bool:
    return strip_labels(a) == strip_labels(b)


# ---------------------------------------------------------------------------
# Variable analysis

VarSet = set


def _term_vars(t: Term, out: set[str]) -> None:
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, DiffVar):
        out.add(t.name)
    elif isinstance(t, Const):
        pass
    elif isinstance(t, BinTerm):
        _term_vars(t.left, out)
        _term_vars(t.right, out)
    elif isinstance(t, Func):
        for a in t.args:
            _term_vars(a, out)
    elif isinstance(t, Dif):
        _term_vars(t.sub, out)
    else:  # pragma: no cover
        raise TypeError(f"unknown term {t!r}")


def term_vars(t: Term) -> set[str]:
    out: set[str] = set()
    _term_vars(t, out)
    return out


def atom_vars(a: Atom) -> set[str]:
    if isinstance(a, TruthAtom):
        return set()
    if isinstance(a, Cmp):
        return term_vars(a.lhs) | term_vars(a.rhs)
    if isinstance(a, PredApp):
        out: set[str] = set()
        for t in a.args:
            out |= term_vars(t)
        return out
    if isinstance(a, AssignAtom):
        return {a.var} | term_vars(a.rhs)
    if isinstance(a, RandomAssignAtom):
        return {a.var}
    if isinstance(a, OdeAtom):
        return {a.var, a.var + "'"} | term_vars(a.rhs)
    raise TypeError(f"unknown atom {a!r}")  # pragma: no cover


def bound_vars(s: Stmt) -> set[str]:
    """Variables written by a program: assignment targets, ODE variables
    together with their differential symbols, nothing for tests."""
    if isinstance(s, SAtom):
        a = s.atom
        if isinstance(a, AssignAtom):
            return {a.var}
        if isinstance(a, RandomAssignAtom):
            return {a.var}
        if isinstance(a, OdeAtom):
            return {a.var, a.var + "'"}
        raise TypeError(f"bad program atom {a!r}")
    if isinstance(s, Test):
        return set()
    if isinstance(s, (Seq, Choice)):
        return bound_vars(s.left) | bound_vars(s.right)
    if isinstance(s, Star):
        return bound_vars(s.sub)
    if isinstance(s, OdeSystem):
        out: set[str] = set()
        for eq in s.eqs:
            out |= bound_vars(eq)
        return out
    raise TypeError(f"unknown stmt {s!r}")  # pragma: no cover


def must_bound_vars(s: Stmt) -> set[str]:
    """Variables bound on every path (used by FV of modalities)."""
    if isinstance(s, (SAtom, OdeSystem)):
        return bound_vars(s)
    if isinstance(s, Test):
        return set()
    if isinstance(s, Seq):
        return must_bound_vars(s.left) | must_bound_vars(s.right)
    if isinstance(s, Choice):
        return must_bound_vars(s.left) & must_bound_vars(s.right)
    if isinstance(s, Star):
        return set()
    raise TypeError(f"unknown stmt {s!r}")  # pragma: no cover


def free_vars(n: Node | Term) -> set[str]:
    if isinstance(n, (Var, DiffVar, Const, BinTerm, Func, Dif)):
        return term_vars(n)
    if isinstance(n, FAtom):
        return atom_vars(n.atom)
    if isinstance(n, Not):
        return free_vars(n.sub)
    if isinstance(n, BinFml):
        return free_vars(n.left) | free_vars(n.right)
    if isinstance(n, Quant):
        return free_vars(n.sub) - {n.var}
    if isinstance(n, Modal):
        return free_vars(n.prog) | (free_vars(n.sub) - must_bound_vars(n.prog))
    if isinstance(n, SAtom):
        a = n.atom
        if isinstance(a, AssignAtom):
            return term_vars(a.rhs)
        if isinstance(a, RandomAssignAtom):
            return set()
        if isinstance(a, OdeAtom):
            # the initial value of the ODE variable is read
            return {a.var} | term_vars(a.rhs)
        raise TypeError(f"bad program atom {a!r}")
    if isinstance(n, Test):
        return free_vars(n.cond)
    if isinstance(n, Seq):
        return free_vars(n.left) | (free_vars(n.right) - must_bound_vars(n.left))
    if isinstance(n, Choice):
        return free_vars(n.left) | free_vars(n.right)
    if isinstance(n, Star):
        return free_vars(n.sub)
    if isinstance(n, OdeSystem):
        out: set[str] = set()
        for eq in n.eqs:
            out |= free_vars(eq)
        return out | free_vars(n.domain)
    raise TypeError(f"unknown node {n!r}")  # pragma: no cover


def all_vars(n: Node) -> set[str]:
    out: set[str] = set()

    def walk(x: Node) -> None:
        if isinstance(x, (FAtom, SAtom)):
            out.update(atom_vars(x.atom))
        elif isinstance(x, Not):
            walk(x.sub)
        elif isinstance(x, BinFml):
            walk(x.left)
            walk(x.right)
        elif isinstance(x, Quant):
            out.add(x.var)
            walk(x.sub)
        elif isinstance(x, Modal):
            walk(x.prog)
            walk(x.sub)
        elif isinstance(x, Test):
            walk(x.cond)
        elif isinstance(x, (Seq, Choice)):
            walk(x.left)
            walk(x.right)
        elif isinstance(x, Star):
            walk(x.sub)
        elif isinstance(x, OdeSystem):
            for eq in x.eqs:
                walk(eq)
            walk(x.domain)

    walk(n)
    return out


# ---------------------------------------------------------------------------
# Renaming and substitution


def rename_term(t: Term, ren: dict[str, str]) -> Term:
    if isinstance(t, Var):
        return Var(ren.get(t.name, t.name))
    if isinstance(t, DiffVar):
        if t.name in ren:
            new = ren[t.name]
            if not new.endswith("'"):
                raise SyntaxError_(f"cannot rename differential symbol {t.name} to {new}")
            return DiffVar(new[:-1])
        if t.base in ren:
            return DiffVar(ren[t.base])
        return t
    if isinstance(t, Const):
        return t
    if isinstance(t, BinTerm):
        return BinTerm(t.op, rename_term(t.left, ren), rename_term(t.right, ren))
    if isinstance(t, Func):
        return Func(t.name, tuple(rename_term(a, ren) for a in t.args))
    if isinstance(t, Dif):
        return Dif(rename_term(t.sub, ren))
    raise TypeError(f"unknown term {t!r}")  # pragma: no cover


def rename_atom(a: Atom, ren: dict[str, str]) -> Atom:
    if isinstance(a, TruthAtom):
        return a
    if isinstance(a, Cmp):
        return Cmp(a.op, rename_term(a.lhs, ren), rename_term(a.rhs, ren))
    if isinstance(a, PredApp):
        return PredApp(a.name, tuple(rename_term(t, ren) for t in a.args))
    if isinstance(a, AssignAtom):
        return AssignAtom(_rename_name(a.var, ren), rename_term(a.rhs, ren))
    if isinstance(a, RandomAssignAtom):
        return RandomAssignAtom(_rename_name(a.var, ren))
    if isinstance(a, OdeAtom):
        return OdeAtom(ren.get(a.var, a.var), rename_term(a.rhs, ren))
    raise TypeError(f"unknown atom {a!r}")  # pragma: no cover


def _rename_name(name: str, ren: dict[str, str]) -> str:
    if name in ren:
        return ren[name]
    if name.endswith("'") and name[:-1] in ren:
        return ren[name[:-1]] + "'"
    return name


def rename(node: Node, ren: dict[str, str]) -> Node:
    """Total renaming of variables, including bound occurrences."""

    def walk(n: Node) -> Node:
        if isinstance(n, FAtom):
            return FAtom(rename_atom(n.atom, ren), n.labels)
        if isinstance(n, SAtom):
            return SAtom(rename_atom(n.atom, ren), n.labels)
        if isinstance(n, Not):
            return Not(walk(n.sub))
        if isinstance(n, BinFml):
            return BinFml(n.op, walk(n.left), walk(n.right))
        if isinstance(n, Quant):
            return Quant(n.kind, ren.get(n.var, n.var), walk(n.sub))
        if isinstance(n, Modal):
            return Modal(n.kind, walk(n.prog), walk(n.sub))
        if isinstance(n, Test):
            return Test(walk(n.cond))
        if isinstance(n, Seq):
            return Seq(walk(n.left), walk(n.right))
        if isinstance(n, Choice):
            return Choice(walk(n.left), walk(n.right))
        if isinstance(n, Star):
            return Star(walk(n.sub))
        if isinstance(n, OdeSystem):
            return OdeSystem(tuple(walk(eq) for eq in n.eqs), walk(n.domain))
        raise TypeError(f"unknown node {n!r}")  # pragma: no cover

    return walk(node)


def subst_term(t: Term, var: str, repl: Term) -> Term:
    if isinstance(t, Var):
        return repl if t.name == var else t
    if isinstance(t, DiffVar):
        return repl if t.name == var else t
    if isinstance(t, Const):
        return t
    if isinstance(t, BinTerm):
        return BinTerm(t.op, subst_term(t.left, var, repl), subst_term(t.right, var, repl))
    if isinstance(t, Func):
        return Func(t.name, tuple(subst_term(a, var, repl) for a in t.args))
    if isinstance(t, Dif):
        return Dif(subst_term(t.sub, var, repl))
    raise TypeError(f"unknown term {t!r}")  # pragma: no cover


class SubstitutionError(Exception):
    pass


def subst_fml(f: Fml, var: str, repl: Term) -> Fml:
    """Replace free occurrences of var by repl; refuses capture and
    substitution under programs that bind variables of the replacement."""
    repl_vars = term_vars(repl) | {var}

    def walk_fml(n: Fml) -> Fml:
        if isinstance(n, FAtom):
            return FAtom(_subst_atom(n.atom), n.labels)
        if isinstance(n, Not):
            return Not(walk_fml(n.sub))
        if isinstance(n, BinFml):
            return BinFml(n.op, walk_fml(n.left), walk_fml(n.right))
        if isinstance(n, Quant):
            if n.var == var:
                return n
            if n.var in repl_vars and var in free_vars(n.sub):
                raise SubstitutionError(
                    f"substituting {var} would capture bound variable {n.var}"
                )
            return Quant(n.kind, n.var, walk_fml(n.sub))
        if isinstance(n, Modal):
            bv = bound_vars(n.prog)
            if var in bv:
                # occurrences under the program refer to the rebound variable
                if var in free_vars(n):
                    raise SubstitutionError(
                        f"cannot substitute {var} under a program binding it"
                    )
                return n
            if bv & repl_vars:
                raise SubstitutionError(
                    f"substituting {var} under a program binding {sorted(bv & repl_vars)}"
                )
            return Modal(n.kind, walk_stmt(n.prog), walk_fml(n.sub))
        raise TypeError(f"unknown fml {n!r}")  # pragma: no cover

    def walk_stmt(s: Stmt) -> Stmt:
        if isinstance(s, SAtom):
            return SAtom(_subst_atom(s.atom), s.labels)
        if isinstance(s, Test):
            return Test(walk_fml(s.cond))
        if isinstance(s, Seq):
            return Seq(walk_stmt(s.left), walk_stmt(s.right))
        if isinstance(s, Choice):
            return Choice(walk_stmt(s.left), walk_stmt(s.right))
        if isinstance(s, Star):
            return Star(walk_stmt(s.sub))
        if isinstance(s, OdeSystem):
            return OdeSystem(tuple(walk_stmt(eq) for eq in s.eqs), walk_fml(s.domain))
        raise TypeError(f"unknown stmt {s!r}")  # pragma: no cover

    def _subst_atom(a: Atom) -> Atom:
        if isinstance(a, TruthAtom):
            return a
        if isinstance(a, Cmp):
            return Cmp(a.op, subst_term(a.lhs, var, repl), subst_term(a.rhs, var, repl))
        if isinstance(a, PredApp):
            return PredApp(a.name, tuple(subst_term(t, var, repl) for t in a.args))
        if isinstance(a, AssignAtom):
            if a.var == var:
                raise SubstitutionError(f"cannot substitute assigned variable {var}")
            return AssignAtom(a.var, subst_term(a.rhs, var, repl))
        if isinstance(a, RandomAssignAtom):
            return a
        if isinstance(a, OdeAtom):
            if var in (a.var, a.var + "'"):
                raise SubstitutionError(f"cannot substitute ODE variable {var}")
            return OdeAtom(a.var, subst_term(a.rhs, var, repl))
        raise TypeError(f"unknown atom {a!r}")  # pragma: no cover

    return walk_fml(f)


def fresh_var(base: str, taken: set[str]) -> str:
    """Stale-copy name for base: x0, x1, ... first one not taken."""
    i = 0
    while True:
        cand = f"{base}{i}"
        if cand not in taken and cand + "'" not in taken:
            return cand
        i += 1


# ---------------------------------------------------------------------------
# Label assignment and cut-label resolution (phi)


def assign_labels(node: Node, alloc: LabelAllocator) -> Node:
    """Give every unlabeled atom a distinct allocator label.

    Atoms already carrying labels (from an @name annotation recorded by the
    parser) are kept; identical atoms occurring twice get different labels.
    """

    def fn(leaf):
        if leaf.labels:
            return leaf
        lbl = alloc.auto()
        if isinstance(leaf, FAtom):
            return FAtom(leaf.atom, (lbl,))
        return SAtom(leaf.atom, (lbl,))

    return map_atoms(node, fn)


def assign_fresh_labels(node: Node, alloc: LabelAllocator) -> Node:
    """Label every atom with a fresh label, ignoring existing ones."""

    def fn(leaf):
        lbl = alloc.fresh()
        if isinstance(leaf, FAtom):
            return FAtom(leaf.atom, (lbl,))
        return SAtom(leaf.atom, (lbl,))

    return map_atoms(node, fn)


def resolve_phi(
    cut: Fml, context: Sequence[Fml], alloc: LabelAllocator
) -> tuple[Fml, list[Label]]:
    """Label a cut formula against a context: an atom equal to a context atom
    reuses that atom's labels (all of them when several match), otherwise it
    gets a fresh label. Returns the labeled formula and the fresh labels in
    atom order."""
    by_atom: dict[Atom, list[Label]] = {}
    for ctx in context:
        for labels, atom in atoms_of(ctx):
            bucket = by_atom.setdefault(atom, [])
            for lbl in labels:
                if lbl not in bucket:
                    bucket.append(lbl)
    fresh: list[Label] = []

    def fn(leaf):
        matched = by_atom.get(leaf.atom)
        if matched:
            labels = tuple(matched)
        else:
            lbl = alloc.fresh()
            fresh.append(lbl)
            labels = (lbl,)
        if isinstance(leaf, FAtom):
            return FAtom(leaf.atom, labels)
        return SAtom(leaf.atom, labels)

    return map_atoms(cut, fn), fresh


# ---------------------------------------------------------------------------
# Parser

_PUNCT = [
    "<->", "->", "++", ":=", ">=", "<=", "&&", "||",
    "(", ")", "[", "]", "{", "}", ",", ";", "?", "*", "/", "+", "-",
    "=", ">", "<", "!", "@", "&", ".", "'",
]


@dataclass
class _Tok:
    kind: str  # ident | num | punct | eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":  # comment to end of line
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                if text[j] == ".":
                    # "." followed by non-digit ends the number (e.g. "1.x")
                    if j + 1 >= n or not text[j + 1].isdigit():
                        break
                    seen_dot = True
                j += 1
            toks.append(_Tok("num", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(_Tok("punct", p, line, col))
                i += len(p)
                col += len(p)
                break
        else:
            raise SyntaxError_(f"unexpected character {c!r}", line, col)
    toks.append(_Tok("eof", "", line, col))
    return toks


_QUANT_WORDS = {"forall": "forall", "exists": "exists"}


class _Parser:
    """Recursive-descent parser for the model grammar."""

    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0
        self.pending_label: str | None = None
        self.explicit: dict[int, str] = {}  # token pos of atom start -> name

    # --- token helpers

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.text == text and t.kind in ("punct", "ident")

    def eat(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if not self.at(text):
            raise SyntaxError_(f"expected {text!r}, found {t.text!r}", t.line, t.col)
        return self.next()

    def fail(self, msg: str):
        t = self.peek()
        raise SyntaxError_(msg, t.line, t.col)

    # --- label annotations

    def maybe_label(self) -> str | None:
        if self.at("@"):
            self.next()
            t = self.peek()
            if t.kind != "ident":
                self.fail("expected label name after '@'")
            self.next()
            return t.text
        return None

    def mk_fatom(self, atom: Atom, name: str | None) -> FAtom:
        f = FAtom(atom, ())
        if name is not None:
            self.explicit[id(f)] = name
        return f

    def mk_satom(self, atom: Atom, name: str | None) -> SAtom:
        s = SAtom(atom, ())
        if name is not None:
            self.explicit[id(s)] = name
        return s

    # --- formulas

    def fml(self) -> Fml:
        return self.iff()

    def iff(self) -> Fml:
        left = self.imp()
        while self.at("<->"):
            self.next()
            right = self.imp()
            left = BinFml("<->", left, right)
        return left

    def imp(self) -> Fml:
        left = self.or_()
        if self.at("->"):
            self.next()
            return BinFml("->", left, self.imp())
        return left

    def or_(self) -> Fml:
        left = self.and_()
        while self.at("||"):
            self.next()
            left = BinFml("||", left, self.and_())
        return left

    def and_(self) -> Fml:
        left = self.unary()
        while self.at("&&"):
            self.next()
            left = BinFml("&&", left, self.unary())
        return left

    def unary(self) -> Fml:
        t = self.peek()
        if self.at("!"):
            self.next()
            return Not(self.unary())
        if t.kind == "ident" and t.text in _QUANT_WORDS:
            self.next()
            v = self.peek()
            if v.kind != "ident":
                self.fail("expected variable after quantifier")
            self.next()
            self.expect(".")
            return Quant(_QUANT_WORDS[t.text], v.text, self.unary())
        if self.at("["):
            self.next()
            prog = self.prog()
            self.expect("]")
            return Modal("box", prog, self.unary())
        if self.at("<"):
            self.next()
            prog = self.prog()
            self.expect(">")
            return Modal("dia", prog, self.unary())
        return self.primary()

    def primary(self) -> Fml:
        if self.at("("):
            save = self.pos
            self.next()
            try:
                inner = self.fml()
                self.expect(")")
            except SyntaxError_:
                self.pos = save
                return self.comparison()
            # a parenthesized formula cannot continue as a term
            if self.peek().text in ("+", "-", "*", "/", "=", ">=", ">", "<=", "<", "'"):
                self.pos = save
                return self.comparison()
            return inner
        name = self.maybe_label()
        t = self.peek()
        if t.kind == "ident" and t.text == "true":
            self.next()
            return self.mk_fatom(TruthAtom(True), name)
        if t.kind == "ident" and t.text == "false":
            self.next()
            return self.mk_fatom(TruthAtom(False), name)
        return self.comparison(name)

    def comparison(self, name: str | None = None) -> Fml:
        if name is None:
            name = self.maybe_label()
        lhs = self.term()
        t = self.peek()
        if t.text in CMP_OPS and t.kind == "punct":
            self.next()
            rhs = self.term()
            return self.mk_fatom(Cmp(t.text, lhs, rhs), name)
        if isinstance(lhs, Func):
            return self.mk_fatom(PredApp(lhs.name, lhs.args), name)
        self.fail("expected comparison operator")

    # --- terms

    def term(self) -> Term:
        left = self.muldiv()
        while self.peek().kind == "punct" and self.peek().text in ("+", "-"):
            op = self.next().text
            left = BinTerm(op, left, self.muldiv())
        return left

    def muldiv(self) -> Term:
        left = self.unary_term()
        while self.peek().kind == "punct" and self.peek().text in ("*", "/"):
            op = self.next().text
            right = self.unary_term()
            if op == "/" and isinstance(left, Const) and isinstance(right, Const):
                if right.value == 0:
                    self.fail("division by zero constant")
                left = Const(left.value / right.value)
            else:
                left = BinTerm(op, left, right)
        return left

    def unary_term(self) -> Term:
        if self.at("-"):
            self.next()
            return neg(self.unary_term())
        return self.atom_term()

    def atom_term(self) -> Term:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Const(Fraction(t.text))
        if t.kind == "ident":
            self.next()
            if self.at("("):
                self.next()
                args = [self.term()]
                while self.eat(","):
                    args.append(self.term())
                self.expect(")")
                f: Term = Func(t.text, tuple(args))
            elif self.at("'"):
                self.next()
                f = DiffVar(t.text)
            else:
                f = Var(t.text)
            return f
        if self.at("("):
            self.next()
            inner = self.term()
            self.expect(")")
            if self.at("'"):
                self.next()
                return Dif(inner)
            return inner
        self.fail("expected term")

    # --- programs

    def prog(self) -> Stmt:
        left = self.seq_prog()
        while self.at("++"):
            self.next()
            left = Choice(left, self.seq_prog())
        return left

    def seq_prog(self) -> Stmt:
        left = self.postfix_prog()
        if self.at(";"):
            self.next()
            return Seq(left, self.seq_prog())
        return left

    def postfix_prog(self) -> Stmt:
        base = self.base_prog()
        while self.at("*"):
            self.next()
            base = Star(base)
        return base

    def base_prog(self) -> Stmt:
        if self.at("("):
            self.next()
            inner = self.prog()
            self.expect(")")
            return inner
        if self.at("?"):
            self.next()
            return Test(self.unary())
        if self.at("{"):
            self.next()
            eqs = [self.ode_eq()]
            while self.eat(","):
                eqs.append(self.ode_eq())
            if self.eat("&"):
                domain = self.fml()
            else:
                domain = FAtom(TruthAtom(True), ())
            self.expect("}")
            return OdeSystem(tuple(eqs), domain)
        name = self.maybe_label()
        t = self.peek()
        if t.kind != "ident":
            self.fail("expected program")
        self.next()
        var = t.text
        if self.eat("'"):
            var += "'"
        self.expect(":=")
        if self.eat("*"):
            return self.mk_satom(RandomAssignAtom(var), name)
        return self.mk_satom(AssignAtom(var, self.term()), name)

    def ode_eq(self) -> SAtom:
        name = self.maybe_label()
        t = self.peek()
        if t.kind != "ident":
            self.fail("expected ODE variable")
        self.next()
        self.expect("'")
        self.expect("=")
        rhs = self.term()
        return self.mk_satom(OdeAtom(t.text, rhs), name)


def parse_formula(text: str) -> Fml:
    """Parse to an unlabeled formula (explicit @names dropped)."""
    p = _Parser(text)
    f = p.fml()
    t = p.peek()
    if t.kind != "eof":
        raise SyntaxError_(f"trailing input {t.text!r}", t.line, t.col)
    return f


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    tok = p.peek()
    if tok.kind != "eof":
        raise SyntaxError_(f"trailing input {tok.text!r}", tok.line, tok.col)
    return t


def parse_model(text: str, alloc: LabelAllocator | None = None) -> Fml:
    """Parse a model file into a fully labeled formula.

    Explicit @name annotations become model labels (duplicates are an
    error); remaining atoms receive allocator labels. Function and
    predicate arities must be consistent across the model.
    """
    alloc = alloc or LabelAllocator()
    p = _Parser(text)
    f = p.fml()
    t = p.peek()
    if t.kind != "eof":
        raise SyntaxError_(f"trailing input {t.text!r}", t.line, t.col)

    explicit = p.explicit

    def fn(leaf):
        name = explicit.get(id(leaf))
        if name is None:
            return leaf
        lbl = alloc.named(name)
        if isinstance(leaf, FAtom):
            return FAtom(leaf.atom, (lbl,))
        return SAtom(leaf.atom, (lbl,))

    f = map_atoms(f, fn)
    f = assign_labels(f, alloc)
    _check_arities(f)
    return f


def _check_arities(f: Fml) -> None:
    seen: dict[tuple[str, str], int] = {}

    def note(kind: str, name: str, arity: int, where: Atom) -> None:
        key = (kind, name)
        if key in seen and seen[key] != arity:
            raise SyntaxError_(
                f"{kind} '{name}' used with arity {arity} and {seen[key]}"
            )
        seen[key] = arity

    def term(t: Term) -> None:
        if isinstance(t, BinTerm):
            term(t.left)
            term(t.right)
        elif isinstance(t, Func):
            note("function", t.name, len(t.args), t)
            for a in t.args:
                term(a)
        elif isinstance(t, Dif):
            term(t.sub)

    for _, atom in atoms_of(f):
        if isinstance(atom, Cmp):
            term(atom.lhs)
            term(atom.rhs)
        elif isinstance(atom, PredApp):
            note("predicate", atom.name, len(atom.args), atom)
            for a in atom.args:
                term(a)
        elif isinstance(atom, (AssignAtom, OdeAtom)):
            term(atom.rhs)


# ---------------------------------------------------------------------------
# Printer

_TERM_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def print_term(t: Term, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, DiffVar):
        return t.name
    if isinstance(t, Const):
        v = t.value
        if v.denominator == 1:
            return str(v.numerator)
        return f"{v.numerator}/{v.denominator}"
    if isinstance(t, Func):
        return f"{t.name}({', '.join(print_term(a) for a in t.args)})"
    if isinstance(t, Dif):
        return f"({print_term(t.sub)})'"
    if isinstance(t, BinTerm):
        if t.op == "-" and t.left == Const(Fraction(0)):
            # 0 - e is the unary-minus encoding; reparses to the same tree
            inner = print_term(t.right)
            if isinstance(t.right, BinTerm):
                inner = f"({inner})"
            return f"-{inner}"
        prec = _TERM_PREC[t.op]
        s = (
            f"{print_term(t.left, prec, False)} {t.op} "
            f"{print_term(t.right, prec, True)}"
        )
        # left-assoc: parenthesize right child at equal precedence
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({s})"
        return s
    raise TypeError(f"unknown term {t!r}")  # pragma: no cover


def print_atom(a: Atom) -> str:
    if isinstance(a, TruthAtom):
        return "true" if a.value else "false"
    if isinstance(a, Cmp):
        return f"{print_term(a.lhs)} {a.op} {print_term(a.rhs)}"
    if isinstance(a, PredApp):
        return f"{a.name}({', '.join(print_term(t) for t in a.args)})"
    if isinstance(a, AssignAtom):
        return f"{a.var} := {print_term(a.rhs)}"
    if isinstance(a, RandomAssignAtom):
        return f"{a.var} := *"
    if isinstance(a, OdeAtom):
        return f"{a.var}' = {print_term(a.rhs)}"
    raise TypeError(f"unknown atom {a!r}")  # pragma: no cover


_FML_PREC = {"<->": 1, "->": 2, "||": 3, "&&": 4}


def _print_fml(f: Fml, parent_prec: int, right_side: bool, ann: bool) -> str:
    if isinstance(f, FAtom):
        text = print_atom(f.atom)
        if ann and len(f.labels) == 1:
            return f"@{f.labels[0].name} {text}"
        return text
    if isinstance(f, Not):
        return "!" + _print_unary_arg(f.sub, ann)
    if isinstance(f, Quant):
        return f"{f.kind} {f.var} . {_print_unary_arg(f.sub, ann)}"
    if isinstance(f, Modal):
        open_, close = ("[", "]") if f.kind == "box" else ("<", ">")
        return f"{open_}{print_stmt(f.prog, 0, ann)}{close} {_print_unary_arg(f.sub, ann)}"
    if isinstance(f, BinFml):
        prec = _FML_PREC[f.op]
        if f.op == "->":
            # right-assoc: parenthesize left child at equal precedence
            s = (
                f"{_print_fml(f.left, prec + 1, False, ann)} -> "
                f"{_print_fml(f.right, prec, True, ann)}"
            )
            need = prec < parent_prec
        else:
            s = (
                f"{_print_fml(f.left, prec, False, ann)} {f.op} "
                f"{_print_fml(f.right, prec, True, ann)}"
            )
            need = prec < parent_prec or (prec == parent_prec and right_side)
        return f"({s})" if need else s
    raise TypeError(f"unknown fml {f!r}")  # pragma: no cover


def _print_unary_arg(f: Fml, ann: bool) -> str:
    if isinstance(f, (FAtom, Not, Quant, Modal)):
        if isinstance(f, FAtom) and ann and len(f.labels) == 1:
            return f"(@{f.labels[0].name} {print_atom(f.atom)})"
        return _print_fml(f, 99, False, ann)
    return f"({_print_fml(f, 0, False, ann)})"


_STMT_PREC = {"choice": 1, "seq": 2}


def print_stmt(s: Stmt, parent_prec: int = 0, ann: bool = False) -> str:
    if isinstance(s, SAtom):
        text = print_atom(s.atom)
        if ann and len(s.labels) == 1:
            return f"@{s.labels[0].name} {text}"
        return text
    if isinstance(s, Test):
        return "?" + _print_unary_arg(s.cond, ann)
    if isinstance(s, Seq):
        s_ = (
            f"{print_stmt(s.left, _STMT_PREC['seq'] + 1, ann)} ; "
            f"{print_stmt(s.right, _STMT_PREC['seq'], ann)}"
        )
        return f"({s_})" if parent_prec > _STMT_PREC["seq"] else s_
    if isinstance(s, Choice):
        s_ = (
            f"{print_stmt(s.left, _STMT_PREC['choice'], ann)} ++ "
            f"{print_stmt(s.right, _STMT_PREC['choice'] + 1, ann)}"
        )
        return f"({s_})" if parent_prec > _STMT_PREC["choice"] else s_
    if isinstance(s, Star):
        inner = s.sub
        if isinstance(inner, SAtom) and not (ann and len(inner.labels) == 1):
            return print_stmt(inner, 99, ann) + "*"
        return f"({print_stmt(inner, 0, ann)})*"
    if isinstance(s, OdeSystem):
        eqs = ", ".join(print_stmt(eq, 0, ann) for eq in s.eqs)
        dom = _print_fml(s.domain, 0, False, ann)
        return f"{{{eqs} & {dom}}}"
    raise TypeError(f"unknown stmt {s!r}")  # pragma: no cover


def print_formula(f: Fml) -> str:
    """Label-free canonical rendering."""
    return _print_fml(f, 0, False, False)


def print_model(f: Fml) -> str:
    """Canonical rendering with @label annotations; reparses to an
    identically-labeled formula when label names are preserved."""
    return _print_fml(f, 0, False, True)
