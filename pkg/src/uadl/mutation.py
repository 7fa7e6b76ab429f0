"""The mutation operator: apply keep/weaken/remove choices to formulas,
programs, and sequents, with a pluggable weakening provider."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import syntax as sx
from .labelsets import ID, R, W, MutationKind
from .syntax import (
    Atom,
    AssignAtom,
    Cmp,
    FAtom,
    Fml,
    Label,
    OdeAtom,
    OdeSystem,
    PredApp,
    RandomAssignAtom,
    SAtom,
    Stmt,
    Test,
    TruthAtom,
)


class MutationError(Exception):
    pass


@dataclass(frozen=True)
class MutationChoice:
    """Total assignment label -> kind, with optional recorded W witnesses."""

    kinds: Mapping[Label, MutationKind]
    witnesses: Mapping[Label, Atom] = field(default_factory=dict)

    def kind_of(self, labels: Sequence[Label]) -> MutationKind | None:
        """Kind shared by an atom's labels; fused labels must agree."""
        present = [self.kinds[l] for l in labels if l in self.kinds]
        if not present:
            return None
        if len(set(present)) > 1:
            names = ",".join(l.name for l in labels)
            raise MutationError(f"conflicting kinds for cross-labeled atom {names}")
        return present[0]

    def witness_of(self, labels: Sequence[Label]) -> Atom | None:
        for l in labels:
            if l in self.witnesses:
                return self.witnesses[l]
        return None


class WeakeningProvider:
    """Ordered W-replacement candidates per atom.

    By default strict comparisons weaken to their non-strict forms and
    nothing else is offered; user candidates (keyed by the canonical atom
    text) are appended and tried after the defaults.
    """

    def __init__(self, extra: Mapping[str, Sequence[Atom]] | None = None):
        self._extra = dict(extra or {})

    def candidates(self, atom: Atom) -> list[Atom]:
        out: list[Atom] = []
        if isinstance(atom, Cmp):
            if atom.op == ">":
                out.append(Cmp(">=", atom.lhs, atom.rhs))
            elif atom.op == "<":
                out.append(Cmp("<=", atom.lhs, atom.rhs))
        out.extend(self._extra.get(sx.print_atom(atom), ()))
        return out

    def weakens_as_identity(self, atom: Atom) -> bool:
        """Atoms whose W row keeps the atom itself (predicates, random
        assignments, ODE equations, truth constants)."""
        return isinstance(atom, (PredApp, RandomAssignAtom, OdeAtom, TruthAtom))

    def can_weaken(self, atom: Atom) -> bool:
        return self.weakens_as_identity(atom) or bool(self.candidates(atom))

    @staticmethod
    def from_json(data: Mapping[str, Sequence[str]]) -> "WeakeningProvider":
        extra: dict[str, list[Atom]] = {}
        for key, texts in data.items():
            atoms = []
            for text in texts:
                fml = sx.parse_formula(text)
                if not isinstance(fml, FAtom):
                    raise MutationError(f"W candidate {text!r} is not an atom")
                atoms.append(fml.atom)
            extra[key] = atoms
        return WeakeningProvider(extra)


DEFAULT_PROVIDER = WeakeningProvider()


def _weakened(atom: Atom, choice: MutationChoice, labels, provider: WeakeningProvider) -> Atom:
    witness = choice.witness_of(labels)
    if witness is not None:
        return witness
    cands = provider.candidates(atom)
    if not cands:
        names = ",".join(l.name for l in labels)
        raise MutationError(
            f"no weakening candidate for atom '{sx.print_atom(atom)}' (label {names})"
        )
    return cands[0]


def _mutate_formula_atom(leaf: FAtom, choice, provider) -> FAtom:
    kind = choice.kind_of(leaf.labels)
    atom = leaf.atom
    if kind is None or kind is ID or isinstance(atom, TruthAtom):
        return leaf
    if kind is R:
        return FAtom(TruthAtom(True), leaf.labels)
    # W
    if isinstance(atom, PredApp):
        return leaf
    if isinstance(atom, Cmp):
        return FAtom(_weakened(atom, choice, leaf.labels, provider), leaf.labels)
    raise MutationError(f"cannot weaken formula atom {sx.print_atom(atom)}")


def apply(choice: MutationChoice, f: Fml, provider: WeakeningProvider = DEFAULT_PROVIDER) -> Fml:
    """Mutate every atom whose label appears in the choice; labels are kept
    on the mutated atoms so mutated models stay addressable."""
    if isinstance(f, FAtom):
        return _mutate_formula_atom(f, choice, provider)
    if isinstance(f, sx.Not):
        return sx.Not(apply(choice, f.sub, provider))
    if isinstance(f, sx.BinFml):
        return sx.BinFml(f.op, apply(choice, f.left, provider), apply(choice, f.right, provider))
    if isinstance(f, sx.Quant):
        return sx.Quant(f.kind, f.var, apply(choice, f.sub, provider))
    if isinstance(f, sx.Modal):
        return sx.Modal(f.kind, apply_stmt(choice, f.prog, provider), apply(choice, f.sub, provider))
    raise TypeError(f"unknown fml {f!r}")  # pragma: no cover


def apply_stmt(choice: MutationChoice, s: Stmt, provider: WeakeningProvider = DEFAULT_PROVIDER) -> Stmt:
    mutated = _apply_stmt(choice, s, provider)
    if not check_var_side_condition(s, mutated):
        raise MutationError(
            f"mutation introduces variables: {sx.print_stmt(mutated)} from {sx.print_stmt(s)}"
        )
    return mutated


def _apply_stmt(choice: MutationChoice, s: Stmt, provider: WeakeningProvider) -> Stmt:
    if isinstance(s, SAtom):
        kind = choice.kind_of(s.labels)
        atom = s.atom
        if kind is None or kind is ID:
            return s
        if kind is R:
            return Test(FAtom(TruthAtom(True), s.labels))
        # W keeps random assignments; deterministic assignments need a witness
        if isinstance(atom, RandomAssignAtom):
            return s
        if isinstance(atom, AssignAtom):
            repl = _weakened(atom, choice, s.labels, provider)
            if not isinstance(repl, AssignAtom):
                raise MutationError(
                    f"W witness for assignment must be an assignment, got {sx.print_atom(repl)}"
                )
            return SAtom(repl, s.labels)
        raise MutationError(f"cannot weaken program atom {sx.print_atom(atom)}")
    if isinstance(s, Test):
        return Test(apply(choice, s.cond, provider))
    if isinstance(s, sx.Seq):
        return sx.Seq(_apply_stmt(choice, s.left, provider), _apply_stmt(choice, s.right, provider))
    if isinstance(s, sx.Choice):
        return sx.Choice(_apply_stmt(choice, s.left, provider), _apply_stmt(choice, s.right, provider))
    if isinstance(s, sx.Star):
        return sx.Star(_apply_stmt(choice, s.sub, provider))
    if isinstance(s, OdeSystem):
        # R on any equation label turns the whole system into a test of the
        # mutated domain constraint; W acts as identity on equations
        removed = [eq for eq in s.eqs if choice.kind_of(eq.labels) is R]
        domain = apply(choice, s.domain, provider)
        if removed:
            return Test(domain)
        return OdeSystem(s.eqs, domain)
    raise TypeError(f"unknown stmt {s!r}")  # pragma: no cover


def check_var_side_condition(original: Stmt, mutated: Stmt) -> bool:
    """Mutations must not introduce variables (free or bound)."""
    return sx.all_vars(mutated) <= sx.all_vars(original)


def apply_sequent(
    choice: MutationChoice,
    gamma: Sequence[Fml],
    delta: Sequence[Fml],
    provider: WeakeningProvider = DEFAULT_PROVIDER,
) -> tuple[tuple[Fml, ...], tuple[Fml, ...]]:
    return (
        tuple(apply(choice, f, provider) for f in gamma),
        tuple(apply(choice, f, provider) for f in delta),
    )


def default_weaken_candidates(a: Atom) -> list[Atom]:
    return DEFAULT_PROVIDER.candidates(a)
