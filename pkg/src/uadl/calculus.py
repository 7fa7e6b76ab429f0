"""Proof engine: rule catalog, backward expansion, and input/output label-set
propagation in parallel (branch merge) and sequential (threaded) modes.

Conventions for rule application:
  * every rule addresses its principal formula by side ('L'/'R') and index;
    an omitted index means the first formula of the matching shape;
  * subformulas produced on the same side replace the principal formula in
    place, formulas moving across the turnstile are appended at the end;
  * axiom rules rewrite the goal at a formula path and carry the axiom's
    constant output set; applied with no children they close a goal that is
    itself the axiom instance.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from . import syntax as sx
from .labelsets import ANY, EMPTY, ID, R, W, MutationKind, TrackedLabelSet
from .mutation import WeakeningProvider, DEFAULT_PROVIDER
from .oracle import (
    DAResult,
    Invalid,
    LeafRecord,
    Unknown,
    Valid,
    dynamic_analysis,
)
from .syntax import (
    AssignAtom,
    Atom,
    BinFml,
    BinTerm,
    Choice,
    Cmp,
    Const,
    Dif,
    DiffVar,
    FAtom,
    Fml,
    Func,
    Label,
    LabelAllocator,
    Modal,
    Not,
    OdeAtom,
    OdeSystem,
    PredApp,
    Quant,
    RandomAssignAtom,
    SAtom,
    Seq,
    Star,
    Stmt,
    Test,
    TruthAtom,
    Var,
)


class ProofError(Exception):
    def __init__(self, path: tuple[int, ...], message: str):
        self.path = path
        self.message = message
        pretty = ".".join(map(str, path)) or "root"
        super().__init__(f"{pretty}: {message}")


@dataclass(frozen=True)
class Sequent:
    ante: tuple[Fml, ...]
    succ: tuple[Fml, ...]

    def labels(self) -> set[Label]:
        out: set[Label] = set()
        for f in self.ante + self.succ:
            out |= sx.labels_of(f)
        return out

    def text(self) -> str:
        left = ", ".join(sx.print_formula(f) for f in self.ante)
        right = ", ".join(sx.print_formula(f) for f in self.succ)
        return f"{left} |- {right}"


@dataclass
class ProofNode:
    rule: str
    params: dict = field(default_factory=dict)
    children: list["ProofNode"] = field(default_factory=list)

    @staticmethod
    def from_json(data) -> "ProofNode":
        if isinstance(data, list):
            if len(data) != 1:
                raise ValueError("proof script list must hold exactly one root")
            data = data[0]
        if not isinstance(data, dict) or "rule" not in data:
            raise ValueError("proof script node needs a 'rule' field")
        return ProofNode(
            rule=data["rule"],
            params=dict(data.get("params", {})),
            children=[ProofNode.from_json(c) for c in data.get("children", [])],
        )

    def to_json(self) -> dict:
        out: dict = {"rule": self.rule}
        if self.params:
            out["params"] = self.params
        if self.children:
            out["children"] = [c.to_json() for c in self.children]
        return out


@dataclass
class AnnotatedNode:
    path: tuple[int, ...]
    rule: str
    goal: Sequent
    chi: TrackedLabelSet
    sigma: TrackedLabelSet
    fresh: tuple[Label, ...]
    xi: TrackedLabelSet | None
    children: list["AnnotatedNode"]
    leaf_record: LeafRecord | None = None
    labeled_param: Fml | None = None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class AnnotatedProof:
    model: Fml
    mode: str
    root: AnnotatedNode

    @property
    def sigma(self) -> TrackedLabelSet:
        return self.root.sigma

    def nodes(self):
        yield from self.root.walk()

    def leaf_records(self) -> list[LeafRecord]:
        return [n.leaf_record for n in self.nodes() if n.leaf_record is not None]

    def label_names(self) -> dict[str, Label]:
        names: dict[str, Label] = {}
        for n in self.nodes():
            for l in n.goal.labels():
                names[l.name] = l
        return names


# ---------------------------------------------------------------------------
# Expansion results


@dataclass
class Expansion:
    premises: list[Sequent]
    plus: TrackedLabelSet = EMPTY  # constant merged into the output
    minus: tuple[Label, ...] = ()  # fresh labels subtracted at the end
    use_first: bool = False  # conclusion output comes from premise 1 only
    labeled_param: Fml | None = None  # resolved cut/invariant formula


@dataclass
class LeafResult:
    sigma: TrackedLabelSet  # already includes chi
    record: LeafRecord | None = None


# ---------------------------------------------------------------------------
# Helpers


def _fml_error(path, msg):
    raise ProofError(path, msg)


def _split(seq: tuple, idx: int, *replacement) -> tuple:
    return seq[:idx] + tuple(replacement) + seq[idx + 1 :]


def _pick(side_fml: tuple[Fml, ...], index, pred, what: str, path) -> int:
    if index is not None:
        if not (0 <= index < len(side_fml)):
            _fml_error(path, f"{what}: index {index} out of range")
        if not pred(side_fml[index]):
            _fml_error(path, f"{what}: formula at index {index} has the wrong shape")
        return index
    for i, f in enumerate(side_fml):
        if pred(f):
            return i
    _fml_error(path, f"{what}: no matching formula")


def subformula_at(f: Fml, path: Sequence[int]) -> Fml:
    for step in path:
        if isinstance(f, Not) and step == 0:
            f = f.sub
        elif isinstance(f, BinFml) and step in (0, 1):
            f = f.left if step == 0 else f.right
        elif isinstance(f, Quant) and step == 0:
            f = f.sub
        elif isinstance(f, Modal) and step == 0:
            f = f.sub
        else:
            raise ValueError(f"bad path step {step} at {sx.print_formula(f)}")
    return f


def replace_at(f: Fml, path: Sequence[int], new: Fml) -> Fml:
    if not path:
        return new
    step, rest = path[0], path[1:]
    if isinstance(f, Not) and step == 0:
        return Not(replace_at(f.sub, rest, new))
    if isinstance(f, BinFml) and step == 0:
        return BinFml(f.op, replace_at(f.left, rest, new), f.right)
    if isinstance(f, BinFml) and step == 1:
        return BinFml(f.op, f.left, replace_at(f.right, rest, new))
    if isinstance(f, Quant) and step == 0:
        return Quant(f.kind, f.var, replace_at(f.sub, rest, new))
    if isinstance(f, Modal) and step == 0:
        return Modal(f.kind, f.prog, replace_at(f.sub, rest, new))
    raise ValueError(f"bad path step {step} at {sx.print_formula(f)}")


def _anys(labels: Iterable[Label]) -> TrackedLabelSet:
    return TrackedLabelSet.anys(labels)


def _parse_fml_param(params: dict, key: str, path) -> Fml:
    text = params.get(key)
    if text is None:
        _fml_error(path, f"missing parameter '{key}'")
    try:
        return sx.parse_formula(text)
    except sx.SyntaxError_ as exc:
        _fml_error(path, f"bad formula parameter '{key}': {exc}")


def _parse_term_param(params: dict, key: str, path) -> sx.Term:
    text = params.get(key)
    if text is None:
        _fml_error(path, f"missing parameter '{key}'")
    try:
        return sx.parse_term(text)
    except sx.SyntaxError_ as exc:
        _fml_error(path, f"bad term parameter '{key}': {exc}")


def _pair_fuse(a: Fml | Stmt, b: Fml | Stmt, path) -> list[tuple[list[Label], frozenset]]:
    """Position-wise fusion entries for two structurally equal trees."""
    aa, bb = sx.atoms_of(a), sx.atoms_of(b)
    if len(aa) != len(bb):
        _fml_error(path, "cannot fuse: atom counts differ")
    entries = []
    for (la, atom_a), (lb, atom_b) in zip(aa, bb):
        if atom_a != atom_b:
            _fml_error(path, "cannot fuse: atoms differ")
        entries.append((list(la) + list(lb), ANY))
    return entries


def _merge_labels_pointwise(a: Fml, b: Fml) -> Fml:
    """Rebuild a with each atom carrying the union of a's and b's labels."""
    bb = iter(sx.atoms_of(b))

    def fn(leaf):
        lb, _ = next(bb)
        labels = leaf.labels + tuple(l for l in lb if l not in leaf.labels)
        if isinstance(leaf, FAtom):
            return FAtom(leaf.atom, labels)
        return SAtom(leaf.atom, labels)

    return sx.map_atoms(a, fn)


# ---------------------------------------------------------------------------
# Axiom catalog: rewriters used contextually (CER-style) or as leaf closures


@dataclass
class Rewrite:
    new: Fml
    entries: list  # [(labels, kinds)] constant set contribution
    fresh: list[Label]


def _all_any_entries(*nodes) -> list:
    out = []
    for n in nodes:
        for labels, _ in sx.atoms_of(n):
            out.append((labels, ANY))
    return out


def _axiom_test(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and isinstance(f.prog, Test)):
            _fml_error(path, "[?]: expected a tested modality")
        q, p = f.prog.cond, f.sub
        op = "->" if f.kind == "box" else "&&"
        return Rewrite(BinFml(op, q, p), _all_any_entries(q, p), [])
    if not (isinstance(f, BinFml) and f.op in ("->", "&&")):
        _fml_error(path, "[?]: expected an implication or conjunction")
    kind = "box" if f.op == "->" else "dia"
    return Rewrite(
        Modal(kind, Test(f.left), f.right), _all_any_entries(f.left, f.right), []
    )


def _axiom_seq(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and isinstance(f.prog, Seq)):
            _fml_error(path, "[;]: expected a sequenced modality")
        a, b, p = f.prog.left, f.prog.right, f.sub
        return Rewrite(
            Modal(f.kind, a, Modal(f.kind, b, p)), _all_any_entries(a, b, p), []
        )
    if not (
        isinstance(f, Modal)
        and isinstance(f.sub, Modal)
        and f.kind == f.sub.kind
    ):
        _fml_error(path, "[;]: expected nested modalities")
    return Rewrite(
        Modal(f.kind, Seq(f.prog, f.sub.prog), f.sub.sub),
        _all_any_entries(f.prog, f.sub.prog, f.sub.sub),
        [],
    )


def _axiom_dia(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and f.kind == "dia"):
            _fml_error(path, "<>: expected a diamond modality")
        return Rewrite(
            Not(Modal("box", f.prog, Not(f.sub))),
            _all_any_entries(f.prog, f.sub),
            [],
        )
    if not (
        isinstance(f, Not)
        and isinstance(f.sub, Modal)
        and f.sub.kind == "box"
        and isinstance(f.sub.sub, Not)
    ):
        _fml_error(path, "<>: expected !([a] !P)")
    inner = f.sub
    return Rewrite(
        Modal("dia", inner.prog, inner.sub.sub),
        _all_any_entries(inner.prog, inner.sub.sub),
        [],
    )


def _axiom_choice(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and isinstance(f.prog, Choice)):
            _fml_error(path, "[++]: expected a choice modality")
        a, b, p = f.prog.left, f.prog.right, f.sub
        new = BinFml("&&", Modal(f.kind, a, p), Modal(f.kind, b, p))
        return Rewrite(new, _all_any_entries(a, b, p), [])
    # fold: [a]P && [b]P -> [a ++ b]P with the P occurrences fused
    if not (
        isinstance(f, BinFml)
        and f.op == "&&"
        and isinstance(f.left, Modal)
        and isinstance(f.right, Modal)
        and f.left.kind == f.right.kind
    ):
        _fml_error(path, "[++]: expected [a]P && [b]P")
    p1, p2 = f.left.sub, f.right.sub
    if not sx.equal_mod_labels(p1, p2):
        _fml_error(path, "[++]: postconditions differ")
    fused = _merge_labels_pointwise(p1, p2)
    new = Modal(f.left.kind, Choice(f.left.prog, f.right.prog), fused)
    entries = _all_any_entries(f.left.prog, f.right.prog) + _pair_fuse(p1, p2, path)
    return Rewrite(new, entries, [])


def _axiom_box_and(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (
            isinstance(f, Modal)
            and f.kind == "box"
            and isinstance(f.sub, BinFml)
            and f.sub.op == "&&"
        ):
            _fml_error(path, "boxAnd: expected [a](P && Q)")
        a, p, q = f.prog, f.sub.left, f.sub.right
        new = BinFml("&&", Modal("box", a, p), Modal("box", a, q))
        return Rewrite(new, _all_any_entries(a, p, q), [])
    if not (
        isinstance(f, BinFml)
        and f.op == "&&"
        and isinstance(f.left, Modal)
        and isinstance(f.right, Modal)
        and f.left.kind == "box"
        and f.right.kind == "box"
        and sx.equal_mod_labels(f.left.prog, f.right.prog)
    ):
        _fml_error(path, "boxAnd: expected [a]P && [a]Q")
    fused_prog = _merge_labels_pointwise(f.left.prog, f.right.prog)
    new = Modal("box", fused_prog, BinFml("&&", f.left.sub, f.right.sub))
    entries = _pair_fuse(f.left.prog, f.right.prog, path) + _all_any_entries(
        f.left.sub, f.right.sub
    )
    return Rewrite(new, entries, [])


def _axiom_star(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and isinstance(f.prog, Star) and f.kind == "box"):
            _fml_error(path, "[*]: expected [a*]P")
        a, p = f.prog.sub, f.sub
        new = BinFml("&&", p, Modal("box", a, Modal("box", Star(a), p)))
        return Rewrite(new, _all_any_entries(a, p), [])
    if not (
        isinstance(f, BinFml)
        and f.op == "&&"
        and isinstance(f.right, Modal)
        and f.right.kind == "box"
        and isinstance(f.right.sub, Modal)
        and isinstance(f.right.sub.prog, Star)
    ):
        _fml_error(path, "[*]: expected P && [a][a*]P")
    p1 = f.left
    a1 = f.right.prog
    a2 = f.right.sub.prog.sub
    p2 = f.right.sub.sub
    if not (sx.equal_mod_labels(p1, p2) and sx.equal_mod_labels(a1, a2)):
        _fml_error(path, "[*]: copies differ")
    new = Modal(
        "box",
        Star(_merge_labels_pointwise(a1, a2)),
        _merge_labels_pointwise(p1, p2),
    )
    entries = _pair_fuse(a1, a2, path) + _pair_fuse(p1, p2, path)
    return Rewrite(new, entries, [])


def _axiom_induction(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and isinstance(f.prog, Star) and f.kind == "box"):
            _fml_error(path, "I: expected [a*]P")
        a, p = f.prog.sub, f.sub
        new = BinFml(
            "&&",
            p,
            Modal("box", Star(a), BinFml("->", p, Modal("box", a, p))),
        )
        return Rewrite(new, _all_any_entries(a, p), [])
    if not (
        isinstance(f, BinFml)
        and f.op == "&&"
        and isinstance(f.right, Modal)
        and isinstance(f.right.prog, Star)
        and isinstance(f.right.sub, BinFml)
        and f.right.sub.op == "->"
        and isinstance(f.right.sub.right, Modal)
    ):
        _fml_error(path, "I: expected P && [a*](P -> [a]P)")
    p1 = f.left
    a1 = f.right.prog.sub
    p2 = f.right.sub.left
    a2 = f.right.sub.right.prog
    p3 = f.right.sub.right.sub
    for x, y in ((p1, p2), (p1, p3), (a1, a2)):
        if not sx.equal_mod_labels(x, y):
            _fml_error(path, "I: copies differ")
    fused_p = _merge_labels_pointwise(_merge_labels_pointwise(p1, p2), p3)
    fused_a = _merge_labels_pointwise(a1, a2)
    new = Modal("box", Star(fused_a), fused_p)
    entries = []
    for (l1, atom), (l2, _), (l3, _) in zip(
        sx.atoms_of(p1), sx.atoms_of(p2), sx.atoms_of(p3)
    ):
        entries.append((list(l1) + list(l2) + list(l3), ANY))
    entries += _pair_fuse(a1, a2, path)
    return Rewrite(new, entries, [])


def _match_assign_box(f, path, what):
    if not (
        isinstance(f, Modal)
        and f.kind == "box"
        and isinstance(f.prog, SAtom)
        and isinstance(f.prog.atom, AssignAtom)
    ):
        _fml_error(path, f"{what}: expected [x := e]p")
    return f.prog, f.prog.atom, f.sub


def _axiom_assign1(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction != "unfold":
        _fml_error(path, "[:=]1: only unfold is supported")
    satom, atom, p = _match_assign_box(f, path, "[:=]1")
    if atom.var not in sx.free_vars(p):
        _fml_error(path, f"[:=]1: {atom.var} not free in the postcondition")
    try:
        new = sx.subst_fml(p, atom.var, atom.rhs)
    except sx.SubstitutionError as exc:
        _fml_error(path, f"[:=]1: {exc}")
    entries = [(satom.labels, frozenset((ID,)))] + _all_any_entries(p)
    return Rewrite(new, entries, [])


def _axiom_assign2(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        satom, atom, p = _match_assign_box(f, path, "[:=]2")
        if atom.var in sx.free_vars(p):
            _fml_error(path, f"[:=]2: {atom.var} is free in the postcondition")
        return Rewrite(p, [(satom.labels, ANY)] + _all_any_entries(p), [])
    # fold: p -> [x := e]p with x not free in p; x/e from params
    var = params.get("var")
    if var is None:
        _fml_error(path, "[:=]2 fold: missing parameter 'var'")
    term = _parse_term_param(params, "term", path)
    if var in sx.free_vars(f):
        _fml_error(path, f"[:=]2 fold: {var} is free in the formula")
    lbl = alloc.fresh()
    satom = SAtom(AssignAtom(var, term), (lbl,))
    return Rewrite(
        Modal("box", satom, f), [((lbl,), ANY)] + _all_any_entries(f), [lbl]
    )


def _axiom_random1(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction != "unfold":
        _fml_error(path, "[:*]1: only unfold is supported")
    if not (
        isinstance(f, Modal)
        and f.kind == "box"
        and isinstance(f.prog, SAtom)
        and isinstance(f.prog.atom, RandomAssignAtom)
    ):
        _fml_error(path, "[:*]1: expected [x := *]p")
    atom = f.prog.atom
    if atom.var not in sx.free_vars(f.sub):
        _fml_error(path, f"[:*]1: {atom.var} not free in the postcondition")
    new = Quant("forall", atom.var, f.sub)
    return Rewrite(new, [(f.prog.labels, frozenset((ID,)))] + _all_any_entries(f.sub), [])


def _axiom_random2(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction != "unfold":
        _fml_error(path, "[:*]2: only unfold is supported")
    if not (
        isinstance(f, Modal)
        and f.kind == "box"
        and isinstance(f.prog, SAtom)
        and isinstance(f.prog.atom, RandomAssignAtom)
    ):
        _fml_error(path, "[:*]2: expected [x := *]p")
    if f.prog.atom.var in sx.free_vars(f.sub):
        _fml_error(path, f"[:*]2: {f.prog.atom.var} is free in the postcondition")
    return Rewrite(f.sub, [(f.prog.labels, ANY)] + _all_any_entries(f.sub), [])


def _solution_rewrite(f, params, alloc, ctx, path, rule: str, solution, tvar, svar):
    """Shared body of the ODE solution axioms ['] and DS."""
    ode = f.prog
    eq = ode.eqs[0]
    var = eq.atom.var
    taken = sx.all_vars(f) | set(ctx.goal_vars)
    if tvar in taken or svar in taken or tvar == svar:
        _fml_error(path, f"{rule}: time variables {tvar},{svar} must be fresh")
    sol_t = solution
    sol_s = sx.subst_term(solution, tvar, Var(svar))
    lt = alloc.fresh()
    ls = alloc.fresh()
    t0 = FAtom(Cmp(">=", Var(tvar), Const(Fraction(0))), (lt,))
    s_bounds = BinFml(
        "&&",
        FAtom(Cmp(">=", Var(svar), Const(Fraction(0))), (ls,)),
        FAtom(Cmp("<=", Var(svar), Var(tvar)), (ls,)),
    )
    try:
        dom_s = sx.subst_fml(ode.domain, var, sol_s)
        post_assign = Modal(
            "box", SAtom(AssignAtom(var, sol_t), eq.labels), f.sub
        )
    except sx.SubstitutionError as exc:
        _fml_error(path, f"{rule}: {exc}")
    new = Quant(
        "forall",
        tvar,
        BinFml(
            "->",
            t0,
            BinFml(
                "->",
                Quant("forall", svar, BinFml("->", s_bounds, dom_s)),
                post_assign,
            ),
        ),
    )
    entries = (
        [((lt,), frozenset((ID,))), ((ls,), frozenset((ID,)))]
        + [(eq.labels, ANY)]
        + _all_any_entries(ode.domain, f.sub)
    )
    return Rewrite(new, entries, [lt, ls])


def _axiom_solve(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction != "unfold":
        _fml_error(path, "[']: only unfold is supported")
    if not (
        isinstance(f, Modal)
        and f.kind == "box"
        and isinstance(f.prog, OdeSystem)
        and len(f.prog.eqs) == 1
    ):
        _fml_error(path, "[']: expected a single-equation ODE modality")
    solution = _parse_term_param(params, "solution", path)
    tvar = params.get("time_var", "t_")
    svar = params.get("aux_var", "s_")
    return _solution_rewrite(f, params, alloc, ctx, path, "[']", solution, tvar, svar)


def _axiom_ds(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction != "unfold":
        _fml_error(path, "DS: only unfold is supported")
    if not (
        isinstance(f, Modal)
        and f.kind == "box"
        and isinstance(f.prog, OdeSystem)
        and len(f.prog.eqs) == 1
    ):
        _fml_error(path, "DS: expected a single-equation ODE modality")
    eq = f.prog.eqs[0].atom
    if sx.term_vars(eq.rhs) & {eq.var, eq.var + "'"}:
        _fml_error(path, "DS: right-hand side must be constant in the ODE variable")
    tvar = params.get("time_var", "t_")
    solution = BinTerm("+", Var(eq.var), BinTerm("*", eq.rhs, Var(tvar)))
    svar = params.get("aux_var", "s_")
    return _solution_rewrite(f, params, alloc, ctx, path, "DS", solution, tvar, svar)


def _axiom_dw(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Modal) and isinstance(f.prog, OdeSystem)):
            _fml_error(path, "DW: expected an ODE modality")
        ode = f.prog
        new = Modal(f.kind, ode, BinFml("->", ode.domain, f.sub))
        return Rewrite(new, _all_any_entries(ode, f.sub), [])
    if not (
        isinstance(f, Modal)
        and isinstance(f.prog, OdeSystem)
        and isinstance(f.sub, BinFml)
        and f.sub.op == "->"
        and sx.equal_mod_labels(f.prog.domain, f.sub.left)
    ):
        _fml_error(path, "DW: expected [ode & Q](Q -> P)")
    ode = f.prog
    fused_domain = _merge_labels_pointwise(ode.domain, f.sub.left)
    new = Modal(f.kind, OdeSystem(ode.eqs, fused_domain), f.sub.right)
    entries = _pair_fuse(ode.domain, f.sub.left, path) + _all_any_entries(
        *(list(ode.eqs) + [f.sub.right])
    )
    return Rewrite(new, entries, [])


def _axiom_dg(f, direction, params, alloc, ctx, path) -> Rewrite:
    if not (isinstance(f, Modal) and isinstance(f.prog, OdeSystem)):
        _fml_error(path, "DG: expected an ODE modality")
    ode = f.prog
    if direction == "unfold":
        eq_atom = _parse_ghost(params, ctx, f, path)
        lbl = alloc.fresh()
        new = Modal(
            f.kind, OdeSystem(ode.eqs + (SAtom(eq_atom, (lbl,)),), ode.domain), f.sub
        )
        entries = [((lbl,), ANY)] + _all_any_entries(ode, f.sub)
        return Rewrite(new, entries, [lbl])
    # fold: drop the last equation when its variable is a ghost
    if len(ode.eqs) < 2:
        _fml_error(path, "DG fold: no ghost equation to drop")
    ghost = ode.eqs[-1]
    y = ghost.atom.var
    rest = OdeSystem(ode.eqs[:-1], ode.domain)
    if {y, y + "'"} & (sx.free_vars(rest) | sx.free_vars(f.sub)):
        _fml_error(path, f"DG fold: {y} is not a ghost of the remaining system")
    new = Modal(f.kind, rest, f.sub)
    entries = [(ghost.labels, ANY)] + _all_any_entries(rest, f.sub)
    return Rewrite(new, entries, [])


def _parse_ghost(params: dict, ctx, goal_fml, path) -> OdeAtom:
    text = params.get("ghost")
    if text is None:
        _fml_error(path, "missing parameter 'ghost'")
    try:
        parser = sx._Parser(text)
        eq = parser.ode_eq()
        if parser.peek().kind != "eof":
            raise sx.SyntaxError_("trailing input")
    except sx.SyntaxError_ as exc:
        _fml_error(path, f"bad ghost equation: {exc}")
    atom = eq.atom
    y = atom.var
    if y in ctx.goal_vars:
        _fml_error(path, f"ghost variable {y} is not fresh")
    if not _linear_in(atom.rhs, y):
        _fml_error(path, f"ghost equation is not linear in {y}")
    return atom


def _linear_in(t: sx.Term, y: str) -> bool:
    """t must be of shape a(x)*y + b(x) (either summand optional)."""

    def mentions(term):
        return y in sx.term_vars(term) or (y + "'") in sx.term_vars(term)

    def is_linear_summand(term):
        if not mentions(term):
            return True
        if isinstance(term, Var) and term.name == y:
            return True
        if isinstance(term, BinTerm) and term.op == "*":
            l_m, r_m = mentions(term.left), mentions(term.right)
            if l_m and not r_m:
                return is_linear_summand(term.left)
            if r_m and not l_m:
                return is_linear_summand(term.right)
            return False
        return False

    if isinstance(t, BinTerm) and t.op in ("+", "-"):
        return (
            (is_linear_summand(t.left) or not mentions(t.left))
            and (is_linear_summand(t.right) or not mentions(t.right))
            and is_linear_summand(t.left)
            and is_linear_summand(t.right)
        )
    return is_linear_summand(t)


def _axiom_de(variant: int):
    def run(f, direction, params, alloc, ctx, path) -> Rewrite:
        name = f"DE{variant}"
        if direction == "unfold":
            if not (
                isinstance(f, Modal)
                and isinstance(f.prog, OdeSystem)
                and len(f.prog.eqs) == 1
            ):
                _fml_error(path, f"{name}: expected a single-equation ODE modality")
            ode = f.prog
            eq = ode.eqs[0]
            dvar = eq.atom.var + "'"
            in_fv = dvar in sx.free_vars(f.sub)
            if variant == 1 and in_fv:
                _fml_error(path, f"{name}: {dvar} is free in the postcondition")
            if variant == 2 and not in_fv:
                _fml_error(path, f"{name}: {dvar} not free in the postcondition")
            assign = SAtom(AssignAtom(dvar, eq.atom.rhs), eq.labels)
            new = Modal(f.kind, ode, Modal("box", assign, f.sub))
            kinds = ANY if variant == 1 else frozenset((ID,))
            entries = [(eq.labels, kinds)] + _all_any_entries(ode.domain, f.sub)
            return Rewrite(new, entries, [])
        # fold: [ode][x' := f]p -> [ode]p, fusing equation and assignment
        if not (
            isinstance(f, Modal)
            and isinstance(f.prog, OdeSystem)
            and len(f.prog.eqs) == 1
            and isinstance(f.sub, Modal)
            and isinstance(f.sub.prog, SAtom)
            and isinstance(f.sub.prog.atom, AssignAtom)
        ):
            _fml_error(path, f"{name}: expected [ode][x' := f]p")
        ode = f.prog
        eq = ode.eqs[0]
        assign = f.sub.prog
        if assign.atom != AssignAtom(eq.atom.var + "'", eq.atom.rhs):
            _fml_error(path, f"{name}: assignment does not match the equation")
        p = f.sub.sub
        dvar = eq.atom.var + "'"
        in_fv = dvar in sx.free_vars(p)
        if variant == 1 and in_fv:
            _fml_error(path, f"{name}: {dvar} is free in the postcondition")
        if variant == 2 and not in_fv:
            _fml_error(path, f"{name}: {dvar} not free in the postcondition")
        labels = eq.labels + tuple(l for l in assign.labels if l not in eq.labels)
        fused_eq = SAtom(eq.atom, labels)
        new = Modal(f.kind, OdeSystem((fused_eq,), ode.domain), p)
        kinds = ANY if variant == 1 else frozenset((ID,))
        entries = [(labels, kinds)] + _all_any_entries(ode.domain, p)
        return Rewrite(new, entries, [])

    return run


def _axiom_exists_def(f, direction, params, alloc, ctx, path) -> Rewrite:
    if direction == "unfold":
        if not (isinstance(f, Quant) and f.kind == "exists"):
            _fml_error(path, "exists: expected an existential formula")
        new = Not(Quant("forall", f.var, Not(f.sub)))
        return Rewrite(new, _all_any_entries(f.sub), [])
    if not (
        isinstance(f, Not)
        and isinstance(f.sub, Quant)
        and f.sub.kind == "forall"
        and isinstance(f.sub.sub, Not)
    ):
        _fml_error(path, "exists: expected !(forall x !P)")
    new = Quant("exists", f.sub.var, f.sub.sub.sub)
    return Rewrite(new, _all_any_entries(new.sub), [])


AXIOM_REWRITERS: dict[str, Callable] = {
    "[?]": _axiom_test,
    "[;]": _axiom_seq,
    "<>": _axiom_dia,
    "[++]": _axiom_choice,
    "boxAnd": _axiom_box_and,
    "[*]": _axiom_star,
    "I": _axiom_induction,
    "[:=]1": _axiom_assign1,
    "[:=]2": _axiom_assign2,
    "[:*]1": _axiom_random1,
    "[:*]2": _axiom_random2,
    "[']": _axiom_solve,
    "DS": _axiom_ds,
    "DW": _axiom_dw,
    "DG": _axiom_dg,
    "DE1": _axiom_de(1),
    "DE2": _axiom_de(2),
    "exists": _axiom_exists_def,
}


# ---------------------------------------------------------------------------
# Leaf-only axiom instances (implication-shaped axioms)


def _leaf_K(f: Fml, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.left, Modal)
        and isinstance(f.left.sub, BinFml)
        and f.left.sub.op == "->"
        and isinstance(f.right, BinFml)
        and f.right.op == "->"
        and isinstance(f.right.left, Modal)
        and isinstance(f.right.right, Modal)
    )
    if not ok:
        _fml_error(path, "K: goal is not a K instance")
    a0, p0, q0 = f.left.prog, f.left.sub.left, f.left.sub.right
    a1, p1 = f.right.left.prog, f.right.left.sub
    a2, q2 = f.right.right.prog, f.right.right.sub
    for x, y in ((a0, a1), (a0, a2), (p0, p1), (q0, q2)):
        if not sx.equal_mod_labels(x, y):
            _fml_error(path, "K: copies differ")
    entries = []
    for (l0, _), (l1, _), (l2, _) in zip(
        sx.atoms_of(a0), sx.atoms_of(a1), sx.atoms_of(a2)
    ):
        entries.append((list(l0) + list(l1) + list(l2), ANY))
    entries += _pair_fuse(p0, p1, path) + _pair_fuse(q0, q2, path)
    return entries


def _leaf_V(f: Fml, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.right, Modal)
        and sx.equal_mod_labels(f.left, f.right.sub)
    )
    if not ok:
        _fml_error(path, "V: goal is not a V instance")
    if sx.free_vars(f.left) & sx.bound_vars(f.right.prog):
        _fml_error(path, "V: FV(p) and BV(a) intersect")
    return _pair_fuse(f.left, f.right.sub, path) + _all_any_entries(f.right.prog)


def _leaf_alli(f: Fml, params, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.left, Quant)
        and f.left.kind == "forall"
    )
    if not ok:
        _fml_error(path, "alli: goal is not an instantiation instance")
    term = _parse_term_param(params, "term", path)
    try:
        expected = sx.subst_fml(f.left.sub, f.left.var, term)
    except sx.SubstitutionError as exc:
        _fml_error(path, f"alli: {exc}")
    if sx.strip_labels(expected) != sx.strip_labels(f.right):
        _fml_error(path, "alli: right side is not the instantiated body")
    return _pair_fuse(f.left.sub, f.right, path)


def _leaf_all_imp(f: Fml, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.left, Quant)
        and f.left.kind == "forall"
        and isinstance(f.left.sub, BinFml)
        and f.left.sub.op == "->"
        and isinstance(f.right, BinFml)
        and f.right.op == "->"
        and isinstance(f.right.left, Quant)
        and isinstance(f.right.right, Quant)
    )
    if not ok:
        _fml_error(path, "all->: goal is not a quantifier-distribution instance")
    p0, q0 = f.left.sub.left, f.left.sub.right
    p1, q1 = f.right.left.sub, f.right.right.sub
    if not (sx.equal_mod_labels(p0, p1) and sx.equal_mod_labels(q0, q1)):
        _fml_error(path, "all->: copies differ")
    return _pair_fuse(p0, p1, path) + _pair_fuse(q0, q1, path)


def _leaf_vall(f: Fml, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.right, Quant)
        and f.right.kind == "forall"
        and sx.equal_mod_labels(f.left, f.right.sub)
    )
    if not ok:
        _fml_error(path, "Vall: goal is not a vacuous-quantifier instance")
    if f.right.var in sx.free_vars(f.left):
        _fml_error(path, "Vall: the quantified variable is free in p")
    return _pair_fuse(f.left, f.right.sub, path)


def _dif_meta(t: sx.Term) -> sx.Term | None:
    """One-step unfolding of the differential-term axiom schemas."""
    if isinstance(t, Dif):
        inner = t.sub
        if isinstance(inner, BinTerm) and inner.op in ("+", "-"):
            return BinTerm(inner.op, Dif(inner.left), Dif(inner.right))
    return None


def _leaf_dif_axiom(rule: str, f: Fml, path) -> list:
    if not (isinstance(f, FAtom) and isinstance(f.atom, Cmp) and f.atom.op == "="):
        _fml_error(path, f"{rule}: goal must be a single equality")
    lhs, rhs = f.atom.lhs, f.atom.rhs
    ok = False
    if rule == "c'":
        ok = (
            isinstance(lhs, Dif)
            and not sx.term_vars(lhs.sub)
            and rhs == Const(Fraction(0))
        )
    elif rule == "x'":
        ok = (
            isinstance(lhs, Dif)
            and isinstance(lhs.sub, Var)
            and rhs == DiffVar(lhs.sub.name)
        )
    elif rule in ("+'", "-'"):
        op = rule[0]
        ok = (
            isinstance(lhs, Dif)
            and isinstance(lhs.sub, BinTerm)
            and lhs.sub.op == op
            and rhs == BinTerm(op, Dif(lhs.sub.left), Dif(lhs.sub.right))
        )
    elif rule == "*'":
        ok = (
            isinstance(lhs, Dif)
            and isinstance(lhs.sub, BinTerm)
            and lhs.sub.op == "*"
            and rhs
            == BinTerm(
                "+",
                BinTerm("*", Dif(lhs.sub.left), lhs.sub.right),
                BinTerm("*", lhs.sub.left, Dif(lhs.sub.right)),
            )
        )
    elif rule == "/'":
        if (
            isinstance(lhs, Dif)
            and isinstance(lhs.sub, BinTerm)
            and lhs.sub.op == "/"
        ):
            e, k = lhs.sub.left, lhs.sub.right
            expected = BinTerm(
                "/",
                BinTerm(
                    "-", BinTerm("*", Dif(e), k), BinTerm("*", e, Dif(k))
                ),
                BinTerm("*", k, k),
            )
            ok = rhs == expected
    if not ok:
        _fml_error(path, f"{rule}: goal does not match the axiom schema")
    return [(f.labels, frozenset((ID,)))]


def _leaf_chain(f: Fml, path) -> list:
    ok = (
        isinstance(f, Modal)
        and isinstance(f.prog, SAtom)
        and isinstance(f.prog.atom, AssignAtom)
        and isinstance(f.sub, Modal)
        and isinstance(f.sub.prog, SAtom)
        and isinstance(f.sub.prog.atom, AssignAtom)
        and isinstance(f.sub.sub, FAtom)
        and isinstance(f.sub.sub.atom, Cmp)
        and f.sub.sub.atom.op == "="
    )
    if not ok:
        _fml_error(path, "o': goal is not a chain-rule instance")
    outer, inner, eq = f.prog, f.sub.prog, f.sub.sub
    y = outer.atom.var
    g_term = outer.atom.rhs
    if inner.atom != AssignAtom(y + "'", Const(Fraction(1))):
        _fml_error(path, "o': expected [y' := 1] in the middle")
    cmp_ = eq.atom
    rhs_ok = (
        isinstance(cmp_.rhs, BinTerm)
        and cmp_.rhs.op == "*"
        and isinstance(cmp_.rhs.left, Dif)
        and isinstance(cmp_.rhs.right, Dif)
        and cmp_.rhs.right.sub == g_term
        and isinstance(cmp_.lhs, Dif)
    )
    if not rhs_ok:
        _fml_error(path, "o': equality does not match the schema")
    composed = sx.subst_term(cmp_.rhs.left.sub, y, g_term)
    if composed != cmp_.lhs.sub:
        _fml_error(path, "o': composition does not match")
    return [
        (outer.labels, frozenset((ID,))),
        (inner.labels, frozenset((ID,))),
        (eq.labels, frozenset((ID,))),
    ]


LEAF_AXIOMS = {"K", "V", "alli", "all->", "Vall", "DI", "DC",
               "c'", "x'", "+'", "-'", "*'", "/'", "o'"}


def _leaf_DI(f: Fml, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.left, BinFml)
        and f.left.op == "->"
        and isinstance(f.left.right, Modal)
        and isinstance(f.left.right.prog, OdeSystem)
        and isinstance(f.right, BinFml)
        and f.right.op == "<->"
        and isinstance(f.right.left, Modal)
        and isinstance(f.right.right, Modal)
        and isinstance(f.right.right.prog, Test)
    )
    if not ok:
        _fml_error(path, "DI: goal is not a differential-invariant instance")
    return _all_any_entries(f)


def _leaf_DC(f: Fml, path) -> list:
    ok = (
        isinstance(f, BinFml)
        and f.op == "->"
        and isinstance(f.left, Modal)
        and isinstance(f.left.prog, OdeSystem)
        and isinstance(f.right, BinFml)
        and f.right.op == "<->"
        and isinstance(f.right.left, Modal)
        and isinstance(f.right.right, Modal)
    )
    if not ok:
        _fml_error(path, "DC: goal is not a differential-cut instance")
    lhs_box = f.right.left
    rhs_box = f.right.right
    entries = []
    entries += _pair_fuse(f.left.prog.eqs[0], lhs_box.prog.eqs[0], path)
    entries += [(labels, frozenset((ID,))) for labels, _ in sx.atoms_of(lhs_box.sub)]
    entries += [(labels, frozenset((ID,))) for labels, _ in sx.atoms_of(rhs_box.sub)]
    entries += _all_any_entries(f.left.sub, f.left.prog.domain)
    return entries


# ---------------------------------------------------------------------------
# The structural derivative used by dI


class DerivativeError(Exception):
    pass


def differential_term(t: sx.Term, bound: set[str]) -> sx.Term:
    """Structural derivative; variables outside the ODE's bound set count as
    constants, and vanishing summands/factors are collapsed."""
    if not (sx.term_vars(t) & bound):
        return Const(Fraction(0))
    if isinstance(t, Var):
        return DiffVar(t.name)
    if isinstance(t, DiffVar):
        raise DerivativeError(f"cannot differentiate {t.name}")
    if isinstance(t, BinTerm):
        if t.op in ("+", "-"):
            l = differential_term(t.left, bound)
            r = differential_term(t.right, bound)
            return _smart_addsub(t.op, l, r)
        if t.op == "*":
            l = _smart_mul(differential_term(t.left, bound), t.right)
            r = _smart_mul(t.left, differential_term(t.right, bound))
            return _smart_addsub("+", l, r)
        # division: only a constant denominator is differentiable here
        if sx.term_vars(t.right) & bound:
            raise DerivativeError("division by a non-constant term")
        return BinTerm("/", differential_term(t.left, bound), t.right)
    raise DerivativeError(f"unsupported term shape {sx.print_term(t)}")


_ZERO = Const(Fraction(0))


def _smart_addsub(op: str, l: sx.Term, r: sx.Term) -> sx.Term:
    if r == _ZERO:
        return l
    if l == _ZERO and op == "+":
        return r
    return BinTerm(op, l, r)


def _smart_mul(l: sx.Term, r: sx.Term) -> sx.Term:
    if l == _ZERO or r == _ZERO:
        return _ZERO
    return BinTerm("*", l, r)


_DERIV_OPS = {">": ">=", ">=": ">=", "=": ">=", "<": "<=", "<=": "<="}


def differential(f: Fml, bound: set[str]) -> Fml:
    """Derivative of a conjunction of comparisons, labels preserved."""
    if isinstance(f, FAtom):
        atom = f.atom
        if not isinstance(atom, Cmp):
            raise DerivativeError(f"cannot differentiate {sx.print_atom(atom)}")
        op = _DERIV_OPS[atom.op]
        return FAtom(
            Cmp(
                op,
                differential_term(atom.lhs, bound),
                differential_term(atom.rhs, bound),
            ),
            f.labels,
        )
    if isinstance(f, BinFml) and f.op == "&&":
        return BinFml(
            "&&", differential(f.left, bound), differential(f.right, bound)
        )
    raise DerivativeError(
        f"differential only applies to conjunctions of comparisons: {sx.print_formula(f)}"
    )


# ---------------------------------------------------------------------------
# Rule handlers


@dataclass
class CheckContext:
    oracle: object
    provider: WeakeningProvider
    mode: str
    alloc: LabelAllocator
    diagnostics: bool
    jobs: int = 1
    goal_vars: set = field(default_factory=set)


def _is_bin(op):
    return lambda f: isinstance(f, BinFml) and f.op == op


def _is_not(f):
    return isinstance(f, Not)


def _is_quant(kind):
    return lambda f: isinstance(f, Quant) and f.kind == kind


def _rule_and_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_bin("&&"), "andR", path)
    f = goal.succ[i]
    return Expansion(
        [
            Sequent(goal.ante, _split(goal.succ, i, f.left)),
            Sequent(goal.ante, _split(goal.succ, i, f.right)),
        ]
    )


def _rule_and_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_bin("&&"), "andL", path)
    f = goal.ante[i]
    return Expansion([Sequent(_split(goal.ante, i, f.left, f.right), goal.succ)])


def _rule_or_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_bin("||"), "orR", path)
    f = goal.succ[i]
    return Expansion([Sequent(goal.ante, _split(goal.succ, i, f.left, f.right))])


def _rule_or_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_bin("||"), "orL", path)
    f = goal.ante[i]
    return Expansion(
        [
            Sequent(_split(goal.ante, i, f.left), goal.succ),
            Sequent(_split(goal.ante, i, f.right), goal.succ),
        ]
    )


def _rule_imp_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_bin("->"), "impR", path)
    f = goal.succ[i]
    return Expansion(
        [Sequent(goal.ante + (f.left,), _split(goal.succ, i, f.right))]
    )


def _rule_imp_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_bin("->"), "impL", path)
    f = goal.ante[i]
    rest = goal.ante[:i] + goal.ante[i + 1 :]
    return Expansion(
        [
            Sequent(rest, goal.succ + (f.left,)),
            Sequent(_split(goal.ante, i, f.right), goal.succ),
        ]
    )


def _rule_iff_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_bin("<->"), "iffR", path)
    f = goal.succ[i]
    rest = goal.succ[:i] + goal.succ[i + 1 :]
    return Expansion(
        [
            Sequent(goal.ante + (f.left,), rest + (f.right,)),
            Sequent(goal.ante + (f.right,), rest + (f.left,)),
        ]
    )


def _rule_iff_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_bin("<->"), "iffL", path)
    f = goal.ante[i]
    both = BinFml("&&", f.left, f.right)
    neither = BinFml("&&", Not(f.left), Not(f.right))
    return Expansion(
        [
            Sequent(_split(goal.ante, i, both), goal.succ),
            Sequent(_split(goal.ante, i, neither), goal.succ),
        ]
    )


def _rule_not_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_not, "notR", path)
    f = goal.succ[i]
    return Expansion(
        [Sequent(goal.ante + (f.sub,), goal.succ[:i] + goal.succ[i + 1 :])]
    )


def _rule_not_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_not, "notL", path)
    f = goal.ante[i]
    return Expansion(
        [Sequent(goal.ante[:i] + goal.ante[i + 1 :], goal.succ + (f.sub,))]
    )


def _rule_wr(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), lambda f: True, "WR", path)
    dropped = sx.labels_of(goal.succ[i])
    return Expansion(
        [Sequent(goal.ante, goal.succ[:i] + goal.succ[i + 1 :])], plus=_anys(dropped)
    )


def _rule_wl(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), lambda f: True, "WL", path)
    dropped = sx.labels_of(goal.ante[i])
    return Expansion(
        [Sequent(goal.ante[:i] + goal.ante[i + 1 :], goal.succ)], plus=_anys(dropped)
    )


def _rule_pr(goal, params, ctx, path):
    i = params.get("index", 0)
    if not 0 <= i < len(goal.succ) - 1:
        _fml_error(path, "PR: index out of range")
    swapped = _split(goal.succ, i, goal.succ[i + 1], goal.succ[i])[: len(goal.succ)]
    swapped = goal.succ[:i] + (goal.succ[i + 1], goal.succ[i]) + goal.succ[i + 2 :]
    return Expansion([Sequent(goal.ante, swapped)])


def _rule_pl(goal, params, ctx, path):
    i = params.get("index", 0)
    if not 0 <= i < len(goal.ante) - 1:
        _fml_error(path, "PL: index out of range")
    swapped = goal.ante[:i] + (goal.ante[i + 1], goal.ante[i]) + goal.ante[i + 2 :]
    return Expansion([Sequent(swapped, goal.succ)])


def _rule_cut(goal, params, ctx, path):
    cut = _parse_fml_param(params, "formula", path)
    labeled, fresh = sx.resolve_phi(cut, goal.ante, ctx.alloc)
    return Expansion(
        [
            Sequent(goal.ante + (labeled,), goal.succ),
            Sequent(goal.ante, goal.succ + (labeled,)),
        ],
        minus=tuple(fresh),
        labeled_param=labeled,
    )


def _rule_cut_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), lambda f: True, "cutR", path)
    q = _parse_fml_param(params, "formula", path)
    labeled, fresh = sx.resolve_phi(q, goal.ante, ctx.alloc)
    p = goal.succ[i]
    rest = goal.succ[:i] + goal.succ[i + 1 :]
    return Expansion(
        [
            Sequent(goal.ante, rest + (labeled,)),
            Sequent(goal.ante, rest + (BinFml("->", labeled, p),)),
        ],
        minus=tuple(fresh),
        labeled_param=labeled,
    )


def _rule_cut_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), lambda f: True, "cutL", path)
    q = _parse_fml_param(params, "formula", path)
    p = goal.ante[i]
    rest = goal.ante[:i] + goal.ante[i + 1 :]
    labeled, fresh = sx.resolve_phi(q, rest, ctx.alloc)
    return Expansion(
        [
            Sequent((labeled,) + rest, goal.succ),
            Sequent(rest, goal.succ + (BinFml("->", p, labeled),)),
        ],
        minus=tuple(fresh),
        labeled_param=labeled,
    )


def _rule_forall_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_quant("forall"), "allR", path)
    f = goal.succ[i]
    taken = set(ctx.goal_vars)
    y = params.get("var") or sx.fresh_var(f.var, taken)
    if y != f.var and y in taken:
        _fml_error(path, f"allR: variable {y} is not fresh")
    body = sx.rename(f.sub, {f.var: y}) if y != f.var else f.sub
    return Expansion([Sequent(goal.ante, _split(goal.succ, i, body))])


def _rule_exists_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_quant("exists"), "existsL", path)
    f = goal.ante[i]
    taken = set(ctx.goal_vars)
    y = params.get("var") or sx.fresh_var(f.var, taken)
    if y != f.var and y in taken:
        _fml_error(path, f"existsL: variable {y} is not fresh")
    body = sx.rename(f.sub, {f.var: y}) if y != f.var else f.sub
    return Expansion([Sequent(_split(goal.ante, i, body), goal.succ)])


def _rule_forall_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_quant("forall"), "allL", path)
    f = goal.ante[i]
    term = _parse_term_param(params, "term", path)
    try:
        body = sx.subst_fml(f.sub, f.var, term)
    except sx.SubstitutionError as exc:
        _fml_error(path, f"allL: {exc}")
    return Expansion([Sequent(_split(goal.ante, i, body), goal.succ)])


def _rule_exists_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_quant("exists"), "existsR", path)
    f = goal.succ[i]
    term = _parse_term_param(params, "term", path)
    try:
        body = sx.subst_fml(f.sub, f.var, term)
    except sx.SubstitutionError as exc:
        _fml_error(path, f"existsR: {exc}")
    return Expansion([Sequent(goal.ante, _split(goal.succ, i, body))])


# --- sequent rules


def _is_box_star(f):
    return isinstance(f, Modal) and f.kind == "box" and isinstance(f.prog, Star)


def _rule_loop(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box_star, "loop", path)
    f = goal.succ[i]
    inv = _parse_fml_param(params, "invariant", path)
    labeled, fresh = sx.resolve_phi(inv, goal.ante, ctx.alloc)
    alpha = f.prog.sub
    return Expansion(
        [
            Sequent(goal.ante, _split(goal.succ, i, labeled)),
            Sequent((labeled,), (f.sub,)),
            Sequent((labeled,), (Modal("box", alpha, labeled),)),
        ],
        minus=tuple(fresh),
        labeled_param=labeled,
    )


def _is_box(f):
    return isinstance(f, Modal) and f.kind == "box"


def _rule_mr(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box, "MR", path)
    f = goal.succ[i]
    q = _parse_fml_param(params, "formula", path)
    labeled, fresh = sx.resolve_phi(q, [], ctx.alloc)  # all fresh
    return Expansion(
        [
            Sequent(goal.ante, _split(goal.succ, i, Modal("box", f.prog, labeled))),
            Sequent((labeled,), (f.sub,)),
        ],
        minus=tuple(fresh),
        labeled_param=labeled,
    )


def _rule_ml(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_box, "ML", path)
    f = goal.ante[i]
    q = _parse_fml_param(params, "formula", path)
    labeled, fresh = sx.resolve_phi(q, [], ctx.alloc)
    return Expansion(
        [
            Sequent(_split(goal.ante, i, Modal("box", f.prog, labeled)), goal.succ),
            Sequent((f.sub,), (labeled,)),
        ],
        minus=tuple(fresh),
        labeled_param=labeled,
    )


def _rule_gvr(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box, "GVR", path)
    f = goal.succ[i]
    bv = sx.bound_vars(f.prog)
    dropped: set[Label] = set(sx.labels_of(f.prog))
    ante = []
    for g in goal.ante:
        if sx.free_vars(g) & bv:
            dropped |= sx.labels_of(g)
        else:
            ante.append(g)
    succ = []
    for j, d in enumerate(goal.succ):
        if j == i:
            succ.append(f.sub)
            continue
        if sx.free_vars(d) & bv:
            dropped |= sx.labels_of(d)
        else:
            succ.append(d)
    return Expansion(
        [Sequent(tuple(ante), tuple(succ))], plus=_anys(dropped)
    )


def _rule_ig(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), lambda f: True, "iG", path)
    var = params.get("var")
    if var is None:
        _fml_error(path, "iG: missing parameter 'var'")
    if var in ctx.goal_vars:
        _fml_error(path, f"iG: variable {var} is not new")
    term = _parse_term_param(params, "term", path)
    lbl = ctx.alloc.fresh()
    boxed = Modal("box", SAtom(AssignAtom(var, term), (lbl,)), goal.succ[i])
    return Expansion(
        [Sequent(goal.ante, _split(goal.succ, i, boxed))], minus=(lbl,)
    )


def _rule_assign_eq(goal, params, ctx, path):
    def shape(f):
        return (
            isinstance(f, Modal)
            and f.kind == "box"
            and isinstance(f.prog, SAtom)
            and isinstance(f.prog.atom, AssignAtom)
        )

    i = _pick(goal.succ, params.get("index"), shape, "assignEq", path)
    f = goal.succ[i]
    atom = f.prog.atom
    var = atom.var
    others = list(goal.ante) + [d for j, d in enumerate(goal.succ) if j != i]
    used: set[str] = set(ctx.goal_vars)
    needs_stale = any(var in sx.free_vars(g) for g in others) or var in sx.term_vars(
        atom.rhs
    )
    ren: dict[str, str] = {}
    if needs_stale:
        base = var[:-1] if var.endswith("'") else var
        stale = sx.fresh_var(base, used)
        ren = {var: stale + "'" if var.endswith("'") else stale}
    ante = tuple(sx.rename(g, ren) if ren else g for g in goal.ante)
    succ_rest = tuple(
        sx.rename(d, ren) if ren else d
        for j, d in enumerate(goal.succ)
        if j != i
    )
    rhs = sx.rename_term(atom.rhs, ren) if ren else atom.rhs
    lhs_term = DiffVar(var[:-1]) if var.endswith("'") else Var(var)
    equation = FAtom(Cmp("=", lhs_term, rhs), f.prog.labels)
    succ = succ_rest[: min(i, len(succ_rest))] + (f.sub,) + succ_rest[min(i, len(succ_rest)) :]
    return Expansion([Sequent(ante + (equation,), succ)])


def _rule_ur(goal, params, ctx, path):
    src = params.get("from")
    dst = params.get("to")
    if not src or not dst:
        _fml_error(path, "UR: parameters 'from' and 'to' are required")
    if dst in ctx.goal_vars:
        _fml_error(path, f"UR: variable {dst} is not fresh")
    ren = {src: dst}
    return Expansion(
        [
            Sequent(
                tuple(sx.rename(g, ren) for g in goal.ante),
                tuple(sx.rename(d, ren) for d in goal.succ),
            )
        ]
    )


def _bound_rename(goal, params, ctx, path, side: str):
    def shape(f):
        return (
            isinstance(f, Modal)
            and f.kind == "box"
            and isinstance(f.prog, SAtom)
            and isinstance(f.prog.atom, AssignAtom)
        )

    fs = goal.succ if side == "R" else goal.ante
    i = _pick(fs, params.get("index"), shape, "BR" + side, path)
    f = fs[i]
    atom = f.prog.atom
    y = params.get("var")
    if not y:
        _fml_error(path, "BR: missing parameter 'var'")
    if y in ctx.goal_vars:
        _fml_error(path, f"BR: variable {y} is not fresh")
    phi = f.sub
    if {y, y + "'", atom.var + "'"} & sx.free_vars(phi):
        _fml_error(path, "BR: side condition on free variables violated")
    renamed = sx.rename(phi, {atom.var: y})
    new = Modal("box", SAtom(AssignAtom(y, atom.rhs), f.prog.labels), renamed)
    if side == "R":
        return Expansion([Sequent(goal.ante, _split(goal.succ, i, new))])
    return Expansion([Sequent(_split(goal.ante, i, new), goal.succ)])


def _rule_brr(goal, params, ctx, path):
    return _bound_rename(goal, params, ctx, path, "R")


def _rule_brl(goal, params, ctx, path):
    return _bound_rename(goal, params, ctx, path, "L")


def _rule_iffc_r(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_bin("<->"), "iffcR", path)
    f = goal.succ[i]
    return Expansion(
        [Sequent(goal.ante, _split(goal.succ, i, BinFml("<->", f.right, f.left)))]
    )


def _rule_iffc_l(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), _is_bin("<->"), "iffcL", path)
    f = goal.ante[i]
    return Expansion(
        [Sequent(_split(goal.ante, i, BinFml("<->", f.right, f.left)), goal.succ)]
    )


def _rule_imp2iff(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_bin("->"), "->2<->", path)
    f = goal.succ[i]
    return Expansion(
        [Sequent(goal.ante, _split(goal.succ, i, BinFml("<->", f.left, f.right)))]
    )


def _rule_wr_prime(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), lambda f: True, "WRd", path)
    dropped: set[Label] = set()
    for g in goal.ante:
        dropped |= sx.labels_of(g)
    for j, d in enumerate(goal.succ):
        if j != i:
            dropped |= sx.labels_of(d)
    return Expansion([Sequent((), (goal.succ[i],))], plus=_anys(dropped))


def _rule_wl_prime(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("index"), lambda f: True, "WLd", path)
    dropped: set[Label] = set()
    for j, g in enumerate(goal.ante):
        if j != i:
            dropped |= sx.labels_of(g)
    for d in goal.succ:
        dropped |= sx.labels_of(d)
    return Expansion([Sequent((goal.ante[i],), ())], plus=_anys(dropped))


def _rule_wlr(goal, params, ctx, path):
    i = _pick(goal.ante, params.get("left"), lambda f: True, "WLRd", path)
    j = _pick(goal.succ, params.get("right"), lambda f: True, "WLRd", path)
    dropped: set[Label] = set()
    for k, g in enumerate(goal.ante):
        if k != i:
            dropped |= sx.labels_of(g)
    for k, d in enumerate(goal.succ):
        if k != j:
            dropped |= sx.labels_of(d)
    return Expansion([Sequent((goal.ante[i],), (goal.succ[j],))], plus=_anys(dropped))


# --- contextual rules


def _context_target(goal, params, path):
    side = params.get("side", "R")
    fs = goal.succ if side == "R" else goal.ante
    i = params.get("index", 0)
    if not 0 <= i < len(fs):
        _fml_error(path, f"index {i} out of range on side {side}")
    fpath = tuple(params.get("path", ()))
    try:
        target = subformula_at(fs[i], fpath)
    except ValueError as exc:
        _fml_error(path, str(exc))
    return side, i, fpath, target


def _apply_axiom(rule, goal, params, ctx, path) -> Expansion:
    side, i, fpath, target = _context_target(goal, params, path)
    direction = params.get("direction", "unfold")
    rewriter = AXIOM_REWRITERS[rule]
    rw = rewriter(target, direction, params, ctx.alloc, ctx, path)
    new_f = replace_at((goal.succ if side == "R" else goal.ante)[i], fpath, rw.new)
    if side == "R":
        prem = Sequent(goal.ante, _split(goal.succ, i, new_f))
    else:
        prem = Sequent(_split(goal.ante, i, new_f), goal.succ)
    return Expansion(
        [prem], plus=TrackedLabelSet(rw.entries), minus=tuple(rw.fresh)
    )


def _axiom_leaf_sigma(rule, goal, params, ctx, path) -> TrackedLabelSet:
    if len(goal.succ) != 1 or goal.ante:
        _fml_error(path, f"{rule}: axiom leaves close goals of the form |- F")
    f = goal.succ[0]
    if rule == "K":
        return TrackedLabelSet(_leaf_K(f, path))
    if rule == "V":
        return TrackedLabelSet(_leaf_V(f, path))
    if rule == "alli":
        return TrackedLabelSet(_leaf_alli(f, params, path))
    if rule == "all->":
        return TrackedLabelSet(_leaf_all_imp(f, path))
    if rule == "Vall":
        return TrackedLabelSet(_leaf_vall(f, path))
    if rule == "DI":
        return TrackedLabelSet(_leaf_DI(f, path))
    if rule == "DC":
        return TrackedLabelSet(_leaf_DC(f, path))
    if rule == "o'":
        return TrackedLabelSet(_leaf_chain(f, path))
    if rule in ("c'", "x'", "+'", "-'", "*'", "/'"):
        return TrackedLabelSet(_leaf_dif_axiom(rule, f, path))
    # equivalence axioms: accept when unfolding one side yields the other
    if not (isinstance(f, BinFml) and f.op == "<->"):
        _fml_error(path, f"{rule}: axiom leaf goal must be an equivalence")
    rewriter = AXIOM_REWRITERS.get(rule)
    if rewriter is None:
        _fml_error(path, f"{rule}: not usable as a leaf")
    rw = rewriter(f.left, "unfold", params, ctx.alloc, ctx, path)
    if sx.strip_labels(rw.new) != sx.strip_labels(f.right):
        _fml_error(path, f"{rule}: right side is not the unfolding of the left")
    entries = rw.entries + _pair_fuse(rw.new, f.right, path)
    return TrackedLabelSet(entries)


def _rule_cqr(goal, params, ctx, path, side="R"):
    fs = goal.succ if side == "R" else goal.ante
    i = params.get("index", 0)
    if not 0 <= i < len(fs):
        _fml_error(path, f"CQ{side}: index {i} out of range")
    fpath = tuple(params.get("path", ()))
    try:
        target = subformula_at(fs[i], fpath)
    except ValueError as exc:
        _fml_error(path, str(exc))
    if not isinstance(target, FAtom):
        _fml_error(path, f"CQ{side}: path must address an atom")
    tpath = params.get("term_path")
    if tpath is None:
        _fml_error(path, f"CQ{side}: missing parameter 'term_path'")
    new_term = _parse_term_param(params, "term", path)
    try:
        old_term = _term_at(target.atom, tpath)
        new_atom = _replace_term_at(target.atom, tpath, new_term)
    except ValueError as exc:
        _fml_error(path, f"CQ{side}: {exc}")
    lbl = ctx.alloc.fresh()
    equality = FAtom(Cmp("=", new_term, old_term), (lbl,))
    rewritten = replace_at(fs[i], fpath, FAtom(new_atom, target.labels))
    if side == "R":
        prem1 = Sequent(goal.ante, _split(goal.succ, i, rewritten))
    else:
        prem1 = Sequent(_split(goal.ante, i, rewritten), goal.succ)
    prem2 = Sequent((), (equality,))
    return Expansion([prem1, prem2], minus=(lbl,), use_first=True)


def _term_at(atom: Atom, tpath: Sequence[int]) -> sx.Term:
    roots: list[sx.Term]
    if isinstance(atom, Cmp):
        roots = [atom.lhs, atom.rhs]
    elif isinstance(atom, PredApp):
        roots = list(atom.args)
    elif isinstance(atom, (AssignAtom, OdeAtom)):
        roots = [atom.rhs]
    else:
        raise ValueError("atom has no term positions")
    if not tpath:
        raise ValueError("empty term path")
    t = roots[tpath[0]]
    for step in tpath[1:]:
        if isinstance(t, BinTerm):
            t = t.left if step == 0 else t.right
        elif isinstance(t, Func):
            t = t.args[step]
        elif isinstance(t, Dif) and step == 0:
            t = t.sub
        else:
            raise ValueError(f"bad term path step {step}")
    return t


def _replace_term_at(atom: Atom, tpath: Sequence[int], new: sx.Term) -> Atom:
    def repl(t: sx.Term, steps: Sequence[int]) -> sx.Term:
        if not steps:
            return new
        step, rest = steps[0], steps[1:]
        if isinstance(t, BinTerm):
            if step == 0:
                return BinTerm(t.op, repl(t.left, rest), t.right)
            return BinTerm(t.op, t.left, repl(t.right, rest))
        if isinstance(t, Func):
            args = list(t.args)
            args[step] = repl(args[step], rest)
            return Func(t.name, tuple(args))
        if isinstance(t, Dif) and step == 0:
            return Dif(repl(t.sub, rest))
        raise ValueError(f"bad term path step {step}")

    head, rest = tpath[0], tpath[1:]
    if isinstance(atom, Cmp):
        if head == 0:
            return Cmp(atom.op, repl(atom.lhs, rest), atom.rhs)
        return Cmp(atom.op, atom.lhs, repl(atom.rhs, rest))
    if isinstance(atom, PredApp):
        args = list(atom.args)
        args[head] = repl(args[head], rest)
        return PredApp(atom.name, tuple(args))
    if isinstance(atom, (AssignAtom, OdeAtom)):
        if head != 0:
            raise ValueError("term path into an assignment must start at 0")
        if isinstance(atom, AssignAtom):
            return AssignAtom(atom.var, repl(atom.rhs, rest))
        return OdeAtom(atom.var, repl(atom.rhs, rest))
    raise ValueError("atom has no term positions")


def _rule_ctr(goal, params, ctx, path, side="R"):
    fs = goal.succ if side == "R" else goal.ante

    def shape(f):
        return isinstance(f, FAtom) and isinstance(f.atom, Cmp) and f.atom.op == "="

    i = _pick(fs, params.get("index"), shape, "CT" + side, path)
    f = fs[i]
    tpath = params.get("term_path")
    if tpath is None:
        _fml_error(path, f"CT{side}: missing parameter 'term_path'")
    try:
        e = _subterm(f.atom.lhs, tpath)
        k = _subterm(f.atom.rhs, tpath)
        hole = Var("__hole__")
        ctx_l = _replace_subterm(f.atom.lhs, tpath, hole)
        ctx_r = _replace_subterm(f.atom.rhs, tpath, hole)
    except ValueError as exc:
        _fml_error(path, f"CT{side}: {exc}")
    if ctx_l != ctx_r:
        _fml_error(path, f"CT{side}: contexts around the terms differ")
    dropped: set[Label] = set()
    for k_, g in enumerate(goal.ante):
        if side == "L" and k_ == i:
            continue
        dropped |= sx.labels_of(g)
    for k_, d in enumerate(goal.succ):
        if side == "R" and k_ == i:
            continue
        dropped |= sx.labels_of(d)
    prem = Sequent((), (FAtom(Cmp("=", e, k), f.labels),))
    return Expansion([prem], plus=_anys(dropped))


def _subterm(t: sx.Term, steps: Sequence[int]) -> sx.Term:
    for step in steps:
        if isinstance(t, BinTerm):
            t = t.left if step == 0 else t.right
        elif isinstance(t, Func):
            t = t.args[step]
        elif isinstance(t, Dif) and step == 0:
            t = t.sub
        else:
            raise ValueError(f"bad term path step {step}")
    return t


def _replace_subterm(t: sx.Term, steps: Sequence[int], new: sx.Term) -> sx.Term:
    if not steps:
        return new
    step, rest = steps[0], steps[1:]
    if isinstance(t, BinTerm):
        if step == 0:
            return BinTerm(t.op, _replace_subterm(t.left, rest, new), t.right)
        return BinTerm(t.op, t.left, _replace_subterm(t.right, rest, new))
    if isinstance(t, Func):
        args = list(t.args)
        args[step] = _replace_subterm(args[step], rest, new)
        return Func(t.name, tuple(args))
    if isinstance(t, Dif) and step == 0:
        return Dif(_replace_subterm(t.sub, rest, new))
    raise ValueError(f"bad term path step {step}")


def _rule_cer(goal, params, ctx, path, side="R"):
    """Generic contextual equivalence: rewrite P at a path to a supplied Q,
    proving Q <-> P in a second branch."""
    fs = goal.succ if side == "R" else goal.ante
    i = params.get("index", 0)
    if not 0 <= i < len(fs):
        _fml_error(path, f"CE{side}: index {i} out of range")
    fpath = tuple(params.get("path", ()))
    try:
        target = subformula_at(fs[i], fpath)
    except ValueError as exc:
        _fml_error(path, str(exc))
    q = _parse_fml_param(params, "formula", path)
    labeled_q, fresh = sx.resolve_phi(q, [target], ctx.alloc)
    rewritten = replace_at(fs[i], fpath, labeled_q)
    if side == "R":
        prem1 = Sequent(goal.ante, _split(goal.succ, i, rewritten))
    else:
        prem1 = Sequent(_split(goal.ante, i, rewritten), goal.succ)
    prem2 = Sequent((), (BinFml("<->", labeled_q, target),))
    return Expansion(
        [prem1, prem2], minus=tuple(fresh), labeled_param=labeled_q
    )


# --- derived ODE rules


def _is_box_ode(f):
    return isinstance(f, Modal) and f.kind == "box" and isinstance(f.prog, OdeSystem)


def _stale_ode_context(goal, i, ode, ctx):
    """Rename ODE-bound base variables in the context to stale copies."""
    bases = sorted({eq.atom.var for eq in ode.eqs})
    used = set(ctx.goal_vars)
    ren: dict[str, str] = {}
    others = list(goal.ante) + [d for j, d in enumerate(goal.succ) if j != i]
    mentioned = set()
    for g in others:
        mentioned |= sx.free_vars(g)
    for b in bases:
        if b in mentioned or b + "'" in mentioned:
            stale = sx.fresh_var(b, used)
            used.add(stale)
            ren[b] = stale
    ante = tuple(sx.rename(g, ren) if ren else g for g in goal.ante)
    succ_rest = [
        (j, sx.rename(d, ren) if ren else d)
        for j, d in enumerate(goal.succ)
        if j != i
    ]
    return ante, succ_rest


def _rule_dw(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box_ode, "dW", path)
    f = goal.succ[i]
    ode = f.prog
    ante, succ_rest = _stale_ode_context(goal, i, ode, ctx)
    succ = tuple(d for j, d in succ_rest if j < i) + (f.sub,) + tuple(
        d for j, d in succ_rest if j > i
    )
    eq_labels: set[Label] = set()
    for eq in ode.eqs:
        eq_labels |= set(eq.labels)
    prem = Sequent(ante + (ode.domain,), succ)
    return Expansion([prem], plus=_anys(eq_labels))


def _rule_di(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box_ode, "dI", path)
    f = goal.succ[i]
    ode = f.prog
    bound = sx.bound_vars(ode)
    try:
        deriv = differential(f.sub, bound)
    except DerivativeError as exc:
        _fml_error(path, f"dI: {exc}")
    boxed = deriv
    for eq in ode.eqs:
        assign = SAtom(AssignAtom(eq.atom.var + "'", eq.atom.rhs), eq.labels)
        boxed = Modal("box", assign, boxed)
    initial = Sequent(goal.ante, _split(goal.succ, i, f.sub))
    derivative = Sequent(goal.ante, _split(goal.succ, i, boxed))
    return Expansion(
        [initial, derivative], plus=_anys(sx.labels_of(ode.domain))
    )


def _rule_dc(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box_ode, "dC", path)
    f = goal.succ[i]
    ode = f.prog
    cut = _parse_fml_param(params, "formula", path)
    labeled, fresh = sx.resolve_phi(cut, goal.ante, ctx.alloc)
    prove_cut = Sequent(goal.ante, _split(goal.succ, i, Modal(f.kind, ode, labeled)))
    strengthened = OdeSystem(ode.eqs, BinFml("&&", ode.domain, labeled))
    use_cut = Sequent(
        goal.ante, _split(goal.succ, i, Modal(f.kind, strengthened, f.sub))
    )
    return Expansion(
        [prove_cut, use_cut], minus=tuple(fresh), labeled_param=labeled
    )


def _rule_dg(goal, params, ctx, path):
    i = _pick(goal.succ, params.get("index"), _is_box_ode, "dG", path)
    f = goal.succ[i]
    ode = f.prog
    eq_atom = _parse_ghost(params, ctx, f, path)
    lbl = ctx.alloc.fresh()
    extended = OdeSystem(ode.eqs + (SAtom(eq_atom, (lbl,)),), ode.domain)
    prem = Sequent(goal.ante, _split(goal.succ, i, Modal(f.kind, extended, f.sub)))
    return Expansion([prem], minus=(lbl,))


# --- leaf rules


def _leaf_id(goal, params, ctx, path) -> LeafResult:
    li = params.get("left")
    ri = params.get("right")
    pair = None
    for a in [li] if li is not None else range(len(goal.ante)):
        for s in [ri] if ri is not None else range(len(goal.succ)):
            if sx.equal_mod_labels(goal.ante[a], goal.succ[s]):
                pair = (a, s)
                break
        if pair:
            break
    if pair is None:
        _fml_error(path, "id: no antecedent formula matches a succedent formula")
    a, s = pair
    entries = _pair_fuse(goal.ante[a], goal.succ[s], path)
    for j, g in enumerate(goal.ante):
        if j != a:
            entries += _all_any_entries(g)
    for j, d in enumerate(goal.succ):
        if j != s:
            entries += _all_any_entries(d)
    return LeafResult(TrackedLabelSet(entries))


def _leaf_top_r(goal, params, ctx, path) -> LeafResult:
    def shape(f):
        return isinstance(f, FAtom) and f.atom == TruthAtom(True)

    i = _pick(goal.succ, params.get("index"), shape, "topR", path)
    entries = [(goal.succ[i].labels, frozenset((ID,)))]
    for j, g in enumerate(goal.ante):
        entries += _all_any_entries(g)
    for j, d in enumerate(goal.succ):
        if j != i:
            entries += _all_any_entries(d)
    return LeafResult(TrackedLabelSet(entries))


def _leaf_bot_l(goal, params, ctx, path) -> LeafResult:
    def shape(f):
        return isinstance(f, FAtom) and f.atom == TruthAtom(False)

    i = _pick(goal.ante, params.get("index"), shape, "botL", path)
    entries = [(goal.ante[i].labels, frozenset((ID,)))]
    for j, g in enumerate(goal.ante):
        if j != i:
            entries += _all_any_entries(g)
    for d in goal.succ:
        entries += _all_any_entries(d)
    return LeafResult(TrackedLabelSet(entries))


def _leaf_oracle(goal, params, ctx, path, chi) -> LeafResult:
    hint = ctx.oracle.da_hint(goal.ante, goal.succ)
    if hint is not None:
        tls, witnesses = hint
        missing = goal.labels() - tls.labels()
        if missing:
            names = sorted(l.name for l in missing)
            _fml_error(path, f"recorded leaf set misses labels {names}")
        record = LeafRecord(goal.ante, goal.succ, tls, dict(witnesses))
        return LeafResult(tls.merge(chi), record)
    verdict = ctx.oracle.decide(goal.ante, goal.succ)
    if isinstance(verdict, Invalid):
        ce = ", ".join(
            f"{k} = {v}" for k, v in sorted(verdict.counterexample.items())
        )
        _fml_error(path, f"leaf is not valid (counterexample: {ce or 'trivial'})")
    if isinstance(verdict, Unknown):
        _fml_error(path, f"leaf validity unknown: {verdict.reason}")
    da = dynamic_analysis(
        goal.ante, goal.succ, chi, ctx.provider, ctx.oracle
    )
    record = LeafRecord(goal.ante, goal.succ, da.tls, dict(da.witnesses))
    return LeafResult(da.tls.merge(chi), record)


RULES: dict[str, Callable] = {
    "andR": _rule_and_r,
    "andL": _rule_and_l,
    "orR": _rule_or_r,
    "orL": _rule_or_l,
    "impR": _rule_imp_r,
    "impL": _rule_imp_l,
    "iffR": _rule_iff_r,
    "iffL": _rule_iff_l,
    "notR": _rule_not_r,
    "notL": _rule_not_l,
    "WR": _rule_wr,
    "WL": _rule_wl,
    "PR": _rule_pr,
    "PL": _rule_pl,
    "cut": _rule_cut,
    "cutR": _rule_cut_r,
    "cutL": _rule_cut_l,
    "allR": _rule_forall_r,
    "allL": _rule_forall_l,
    "existsR": _rule_exists_r,
    "existsL": _rule_exists_l,
    "loop": _rule_loop,
    "MR": _rule_mr,
    "ML": _rule_ml,
    "GVR": _rule_gvr,
    "iG": _rule_ig,
    "assignEq": _rule_assign_eq,
    "UR": _rule_ur,
    "BRR": _rule_brr,
    "BRL": _rule_brl,
    "iffcR": _rule_iffc_r,
    "iffcL": _rule_iffc_l,
    "->2<->": _rule_imp2iff,
    "WRd": _rule_wr_prime,
    "WLd": _rule_wl_prime,
    "WLRd": _rule_wlr,
    "CER": lambda g, p, c, pa: _rule_cer(g, p, c, pa, "R"),
    "CEL": lambda g, p, c, pa: _rule_cer(g, p, c, pa, "L"),
    "CQR": lambda g, p, c, pa: _rule_cqr(g, p, c, pa, "R"),
    "CQL": lambda g, p, c, pa: _rule_cqr(g, p, c, pa, "L"),
    "CTR": lambda g, p, c, pa: _rule_ctr(g, p, c, pa, "R"),
    "CTL": lambda g, p, c, pa: _rule_ctr(g, p, c, pa, "L"),
    "dW": _rule_dw,
    "dI": _rule_di,
    "dC": _rule_dc,
    "dG": _rule_dg,
}

LEAF_RULES = {"id", "QE", "R", "auto", "topR", "botL"}


# ---------------------------------------------------------------------------
# Checking


def check_proof(
    model: Fml,
    script: ProofNode,
    chi: TrackedLabelSet = EMPTY,
    mode: str = "parallel",
    oracle=None,
    provider: WeakeningProvider = DEFAULT_PROVIDER,
    diagnostics: bool = False,
    alloc: LabelAllocator | None = None,
    jobs: int = 1,
) -> AnnotatedProof:
    """Check a proof script against |- model and return the annotated tree."""
    if mode not in ("parallel", "sequential"):
        raise ValueError(f"unknown mode {mode!r}")
    if oracle is None:
        from .oracle import make_oracle

        oracle = make_oracle("chain")
    fresh_in_chi = [l for l in chi.labels() if l.origin == "fresh"]
    if fresh_in_chi:
        names = sorted(l.name for l in fresh_in_chi)
        raise ProofError((), f"input set may not constrain fresh labels {names}")
    alloc = alloc or LabelAllocator()
    alloc.reserve_names(l.name for l in sx.labels_of(model))
    ctx = CheckContext(
        oracle=oracle,
        provider=provider,
        mode=mode,
        alloc=alloc,
        diagnostics=diagnostics,
        jobs=max(1, jobs),
    )
    goal = Sequent((), (model,))
    root = _check_node(goal, script, chi, ctx, (), ctx.alloc)
    return AnnotatedProof(model=model, mode=mode, root=root)


def _check_node(
    goal: Sequent,
    node: ProofNode,
    chi: TrackedLabelSet,
    ctx: CheckContext,
    path: tuple[int, ...],
    alloc: LabelAllocator,
) -> AnnotatedNode:
    rule = node.rule
    ctx.alloc = alloc
    ctx.goal_vars = set()
    for f in goal.ante + goal.succ:
        ctx.goal_vars |= sx.all_vars(f)

    # leaves
    if rule in LEAF_RULES:
        if node.children:
            raise ProofError(path, f"{rule}: leaf rules take no children")
        if rule == "id":
            leaf = _leaf_id(goal, node.params, ctx, path)
            sigma = leaf.sigma.merge(chi)
        elif rule == "topR":
            leaf = _leaf_top_r(goal, node.params, ctx, path)
            sigma = leaf.sigma.merge(chi)
        elif rule == "botL":
            leaf = _leaf_bot_l(goal, node.params, ctx, path)
            sigma = leaf.sigma.merge(chi)
        else:  # QE, R, auto share the oracle-backed path
            leaf = _leaf_oracle(goal, node.params, ctx, path, chi)
            sigma = leaf.sigma
        _assert_obs2(goal, sigma, path)
        return AnnotatedNode(
            path, rule, goal, chi, sigma, (), None, [], leaf.record
        )

    if rule in AXIOM_REWRITERS and not node.children:
        sigma = _axiom_leaf_sigma(rule, goal, node.params, ctx, path).merge(chi)
        _assert_obs2(goal, sigma, path)
        return AnnotatedNode(path, rule, goal, chi, sigma, (), None, [])
    if rule in LEAF_AXIOMS and not node.children:
        sigma = _axiom_leaf_sigma(rule, goal, node.params, ctx, path).merge(chi)
        _assert_obs2(goal, sigma, path)
        return AnnotatedNode(path, rule, goal, chi, sigma, (), None, [])

    # expansions
    if rule in AXIOM_REWRITERS:
        expansion = _apply_axiom(rule, goal, node.params, ctx, path)
    elif rule in RULES:
        expansion = RULES[rule](goal, node.params, ctx, path)
    else:
        raise ProofError(path, f"unknown rule '{rule}'")

    if len(node.children) != len(expansion.premises):
        raise ProofError(
            path,
            f"{rule}: expected {len(expansion.premises)} children, "
            f"got {len(node.children)}",
        )

    children: list[AnnotatedNode] = []
    if ctx.mode == "sequential":
        incoming = chi
        for k, (prem, child) in enumerate(zip(expansion.premises, node.children)):
            annotated = _check_node(prem, child, incoming, ctx, path + (k,), alloc)
            children.append(annotated)
            incoming = annotated.sigma
        if expansion.use_first:
            combined = children[0].sigma
        else:
            combined = children[-1].sigma
    else:
        if ctx.jobs > 1 and len(node.children) > 1:
            branch_allocs = [alloc.fork() for _ in node.children]
            with ThreadPoolExecutor(max_workers=ctx.jobs) as pool:
                futures = [
                    pool.submit(
                        _check_node, prem, child, chi, ctx, path + (k,), a
                    )
                    for k, (prem, child, a) in enumerate(
                        zip(expansion.premises, node.children, branch_allocs)
                    )
                ]
                children = [f.result() for f in futures]
        else:
            for k, (prem, child) in enumerate(
                zip(expansion.premises, node.children)
            ):
                children.append(
                    _check_node(prem, child, chi, ctx, path + (k,), alloc)
                )
        if expansion.use_first:
            combined = children[0].sigma
        else:
            combined = TrackedLabelSet.merge_all(c.sigma for c in children)

    sigma = combined.merge(expansion.plus) if expansion.plus else combined
    sigma = sigma.merge(chi)

    xi = None
    if expansion.minus and ctx.diagnostics:
        if ctx.mode == "sequential":
            xi = children[-1].sigma.restrict(expansion.minus)
        else:
            xi = TrackedLabelSet.merge_all(
                c.sigma.restrict(expansion.minus) for c in children
            )
    if expansion.minus:
        for lbl in expansion.minus:
            relevant = [
                c for c in children if lbl in c.goal.labels()
            ]
            for c in relevant:
                if lbl not in c.sigma:
                    raise ProofError(
                        path,
                        f"internal: fresh label {lbl.name} missing from a branch output",
                    )
        sigma = sigma.diff(expansion.minus)

    _assert_obs2(goal, sigma, path)
    return AnnotatedNode(
        path,
        rule,
        goal,
        chi,
        sigma,
        tuple(expansion.minus),
        xi,
        children,
        labeled_param=expansion.labeled_param,
    )


def _assert_obs2(goal: Sequent, sigma: TrackedLabelSet, path) -> None:
    missing = goal.labels() - sigma.labels()
    if missing:
        names = sorted(l.name for l in missing)
        raise ProofError(path, f"internal: output set misses goal labels {names}")
