"""Arithmetic validity backends for leaf rules and the leaf-level mutation
search: an exact linear-real-arithmetic decision procedure (Fourier-Motzkin
over exact rationals), a sampling falsifier, and fixture replay."""
from __future__ import annotations

import functools
import hashlib
import itertools
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from . import syntax as sx
from .labelsets import ANY, ID, R, W, MutationKind, TrackedLabelSet
from .mutation import MutationChoice, WeakeningProvider, MutationError, apply_sequent
from .syntax import (
    Atom,
    BinFml,
    BinTerm,
    Cmp,
    Const,
    FAtom,
    Fml,
    Func,
    Label,
    Modal,
    Not,
    PredApp,
    Quant,
    SAtom,
    Test,
    TruthAtom,
    Var,
)


# ---------------------------------------------------------------------------
# Verdicts


@dataclass(frozen=True)
class Valid:
    pass


@dataclass(frozen=True)
class Invalid:
    counterexample: Mapping[str, Fraction]


@dataclass(frozen=True)
class Unknown:
    reason: str


Verdict = Valid | Invalid | Unknown

VALID = Valid()


class FixtureError(Exception):
    pass


# ---------------------------------------------------------------------------
# Canonical sequent hash (labels excluded, order sensitive)


def canonical_sequent_text(gamma: Sequence[Fml], delta: Sequence[Fml]) -> str:
    left = " ,, ".join(sx.print_formula(f) for f in gamma)
    right = " ,, ".join(sx.print_formula(f) for f in delta)
    return f"{left} |- {right}"


def canonical_hash(gamma: Sequence[Fml], delta: Sequence[Fml]) -> str:
    text = canonical_sequent_text(gamma, delta)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Normalization: unfold test-only boxes, strip outer quantifiers


def _unfold_boxes(f: Fml) -> Fml:
    if isinstance(f, FAtom):
        return f
    if isinstance(f, Not):
        return Not(_unfold_boxes(f.sub))
    if isinstance(f, BinFml):
        return BinFml(f.op, _unfold_boxes(f.left), _unfold_boxes(f.right))
    if isinstance(f, Quant):
        return Quant(f.kind, f.var, _unfold_boxes(f.sub))
    if isinstance(f, Modal):
        prog, sub = f.prog, f.sub
        if isinstance(prog, Test):
            cond = _unfold_boxes(prog.cond)
            body = _unfold_boxes(sub)
            if f.kind == "box":
                return BinFml("->", cond, body)
            return BinFml("&&", cond, body)
        if isinstance(prog, sx.Seq):
            return _unfold_boxes(
                Modal(f.kind, prog.left, Modal(f.kind, prog.right, sub))
            )
        if isinstance(prog, sx.Choice):
            l = _unfold_boxes(Modal(f.kind, prog.left, sub))
            r = _unfold_boxes(Modal(f.kind, prog.right, sub))
            return BinFml("&&" if f.kind == "box" else "||", l, r)
        if isinstance(prog, SAtom) and isinstance(prog.atom, sx.AssignAtom):
            try:
                inner = sx.subst_fml(_unfold_boxes(sub), prog.atom.var, prog.atom.rhs)
            except sx.SubstitutionError:
                return f
            return inner
        return f
    raise TypeError(f"unknown fml {f!r}")  # pragma: no cover


def _strip_outer_quant(f: Fml, kind: str, taken: set[str]) -> Fml:
    while isinstance(f, Quant) and f.kind == kind:
        var = f.var
        if var in taken:
            fresh = sx.fresh_var(var, taken)
            f = Quant(f.kind, fresh, sx.rename(f.sub, {var: fresh}))
            var = fresh
        taken.add(var)
        f = f.sub
    return f


# ---------------------------------------------------------------------------
# Linear forms

LinForm = tuple[tuple[tuple[str, Fraction], ...], Fraction]  # coeffs, constant


def _lin_add(a: LinForm, b: LinForm, factor: Fraction = Fraction(1)) -> LinForm:
    coeffs = dict(a[0])
    for var, c in b[0]:
        coeffs[var] = coeffs.get(var, Fraction(0)) + factor * c
    coeffs = {v: c for v, c in coeffs.items() if c != 0}
    return (tuple(sorted(coeffs.items())), a[1] + factor * b[1])


def _lin_scale(a: LinForm, factor: Fraction) -> LinForm:
    return (tuple((v, c * factor) for v, c in a[0]), a[1] * factor)


@functools.lru_cache(maxsize=65536)
def linear_form(t: sx.Term) -> LinForm | None:
    """Linear normal form of a term, or None when nonlinear."""
    if isinstance(t, Const):
        return ((), t.value)
    if isinstance(t, (Var, sx.DiffVar)):
        return (((t.name, Fraction(1)),), Fraction(0))
    if isinstance(t, BinTerm):
        if t.op == "/":
            denom = linear_form(t.right)
            if denom is None or denom[0]:
                return None  # division by a non-constant
            if denom[1] == 0:
                return None
            num = linear_form(t.left)
            if num is None:
                return None
            return _lin_scale(num, Fraction(1) / denom[1])
        left = linear_form(t.left)
        right = linear_form(t.right)
        if left is None or right is None:
            return None
        if t.op == "+":
            return _lin_add(left, right)
        if t.op == "-":
            return _lin_add(left, right, Fraction(-1))
        if t.op == "*":
            if not left[0]:
                return _lin_scale(right, left[1])
            if not right[0]:
                return _lin_scale(left, right[1])
            return None
    return None  # Func, Dif


# Constraint: (coeffs, const, strict) meaning coeffs.x + const >= 0 (or > 0)
Constraint = tuple[tuple[tuple[str, Fraction], ...], Fraction, bool]


@functools.lru_cache(maxsize=65536)
def _atom_constraints(atom: Atom, positive: bool) -> list[Constraint] | None:
    """Constraint-set equivalent of a (possibly negated) comparison atom."""
    if isinstance(atom, TruthAtom):
        truth = atom.value == positive
        return [] if truth else [((), Fraction(-1), False)]  # -1 >= 0: false
    if not isinstance(atom, Cmp):
        return None
    lhs = linear_form(atom.lhs)
    rhs = linear_form(atom.rhs)
    if lhs is None or rhs is None:
        return None
    diff = _lin_add(lhs, rhs, Fraction(-1))  # lhs - rhs
    op = atom.op
    if not positive:
        op = {">": "<=", ">=": "<", "<": ">=", "<=": ">", "=": "!="}[op]
    if op == ">":
        return [(*diff, True)]
    if op == ">=":
        return [(*diff, False)]
    if op == "<":
        neg = _lin_scale(diff, Fraction(-1))
        return [(*neg, True)]
    if op == "<=":
        neg = _lin_scale(diff, Fraction(-1))
        return [(*neg, False)]
    if op == "=":
        neg = _lin_scale(diff, Fraction(-1))
        return [(*diff, False), (*neg, False)]
    raise AssertionError(op)  # "!=" is split at the cube level


def _expand_disequalities(cube: list[tuple[Atom, bool]]) -> list[list[tuple[Atom, bool]]]:
    """Replace each negated equality by the two strict alternatives."""
    cubes: list[list[tuple[Atom, bool]]] = [[]]
    for atom, positive in cube:
        if isinstance(atom, Cmp) and atom.op == "=" and not positive:
            expanded = []
            for c in cubes:
                expanded.append(c + [(Cmp("<", atom.lhs, atom.rhs), True)])
                expanded.append(c + [(Cmp(">", atom.lhs, atom.rhs), True)])
            cubes = expanded
        else:
            for c in cubes:
                c.append((atom, positive))
    return cubes


# ---------------------------------------------------------------------------
# Fourier-Motzkin with witness extraction


def _fm_satisfiable(constraints: list[Constraint]) -> dict[str, Fraction] | None:
    """Exact rational satisfiability of a conjunction of linear constraints;
    returns a witness assignment or None when unsatisfiable."""
    variables = sorted({v for coeffs, _, _ in constraints for v, _ in coeffs})
    stack: list[tuple[str, list[tuple[LinForm, bool, bool]]]] = []
    current = constraints

    for var in variables:
        bounds: list[tuple[LinForm, bool, bool]] = []  # (form, strict, is_lower)
        rest: list[Constraint] = []
        lowers: list[tuple[LinForm, bool]] = []
        uppers: list[tuple[LinForm, bool]] = []
        for coeffs, const, strict in current:
            cmap = dict(coeffs)
            c = cmap.pop(var, Fraction(0))
            if c == 0:
                rest.append((coeffs, const, strict))
                continue
            # c*var + rest >= 0  ->  var >= -(rest)/c (c>0) else var <= ...
            form = _lin_scale((tuple(sorted(cmap.items())), const), Fraction(-1) / c)
            if c > 0:
                lowers.append((form, strict))
                bounds.append((form, strict, True))
            else:
                uppers.append((form, strict))
                bounds.append((form, strict, False))
        for (lo, lo_s), (hi, hi_s) in itertools.product(lowers, uppers):
            # lo <= var <= hi  ->  hi - lo >= 0
            combined = _lin_add(hi, lo, Fraction(-1))
            rest.append((*combined, lo_s or hi_s))
        stack.append((var, bounds))
        current = rest

    for coeffs, const, strict in current:
        assert not coeffs
        if const < 0 or (strict and const == 0):
            return None

    witness: dict[str, Fraction] = {}

    def value_of(form: LinForm) -> Fraction:
        total = form[1]
        for v, c in form[0]:
            total += c * witness[v]
        return total

    for var, bounds in reversed(stack):
        lo = hi = None
        lo_strict = hi_strict = False
        for form, strict, is_lower in bounds:
            val = value_of(form)
            if is_lower:
                if lo is None or val > lo:
                    lo, lo_strict = val, strict
                elif val == lo:
                    lo_strict = lo_strict or strict
            else:
                if hi is None or val < hi:
                    hi, hi_strict = val, strict
                elif val == hi:
                    hi_strict = hi_strict or strict
        if lo is None and hi is None:
            witness[var] = Fraction(0)
        elif lo is None:
            witness[var] = hi - 1 if hi_strict else hi
        elif hi is None:
            witness[var] = lo + 1 if lo_strict else lo
        else:
            witness[var] = lo if (lo == hi) else (lo + hi) / 2
    return witness


# ---------------------------------------------------------------------------
# DNF over atoms


def _dnf(f: Fml, positive: bool) -> list[list[tuple[Atom, bool]]] | None:
    """Disjunctive normal form as atom/polarity cubes; None when the formula
    is not arithmetic (modalities, quantifiers, predicates)."""
    if isinstance(f, FAtom):
        if isinstance(f.atom, (TruthAtom, Cmp)):
            return [[(f.atom, positive)]]
        return None
    if isinstance(f, Not):
        return _dnf(f.sub, not positive)
    if isinstance(f, BinFml):
        if f.op == "&&":
            l, r = _dnf(f.left, positive), _dnf(f.right, positive)
            conj = positive
        elif f.op == "||":
            l, r = _dnf(f.left, positive), _dnf(f.right, positive)
            conj = not positive
        elif f.op == "->":
            l, r = _dnf(f.left, not positive), _dnf(f.right, positive)
            conj = not positive
        else:  # <->  ==  (l -> r) && (r -> l)
            expanded = BinFml(
                "&&",
                BinFml("->", f.left, f.right),
                BinFml("->", f.right, f.left),
            )
            return _dnf(expanded, positive)
        if l is None or r is None:
            return None
        if conj:
            return [a + b for a in l for b in r]
        return l + r
    return None  # Quant / Modal


# ---------------------------------------------------------------------------
# Exact evaluation


class InexactEval(Exception):
    pass


def eval_term(t: sx.Term, env: Mapping[str, Fraction]) -> Fraction:
    if isinstance(t, Const):
        return t.value
    if isinstance(t, (Var, sx.DiffVar)):
        if t.name not in env:
            raise InexactEval(f"unbound variable {t.name}")
        return env[t.name]
    if isinstance(t, BinTerm):
        a, b = eval_term(t.left, env), eval_term(t.right, env)
        if t.op == "+":
            return a + b
        if t.op == "-":
            return a - b
        if t.op == "*":
            return a * b
        if b == 0:
            raise InexactEval("division by zero")
        return a / b
    if isinstance(t, Func):
        if t.name == "sqrt" and len(t.args) == 1:
            v = eval_term(t.args[0], env)
            if v < 0:
                raise InexactEval("sqrt of negative value")
            num, den = v.numerator, v.denominator
            rn, rd = _isqrt_exact(num), _isqrt_exact(den)
            if rn is None or rd is None:
                raise InexactEval("irrational sqrt")
            return Fraction(rn, rd)
        raise InexactEval(f"uninterpreted function {t.name}")
    raise InexactEval("differential term")


def _isqrt_exact(n: int) -> int | None:
    r = int(n**0.5)
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand * cand == n:
            return cand
    return None


def eval_atom(a: Atom, env: Mapping[str, Fraction]) -> bool:
    if isinstance(a, TruthAtom):
        return a.value
    if isinstance(a, Cmp):
        l, r = eval_term(a.lhs, env), eval_term(a.rhs, env)
        return {
            "=": l == r,
            ">=": l >= r,
            ">": l > r,
            "<=": l <= r,
            "<": l < r,
        }[a.op]
    raise InexactEval("non-arithmetic atom")


def eval_fml(f: Fml, env: Mapping[str, Fraction]) -> bool:
    if isinstance(f, FAtom):
        return eval_atom(f.atom, env)
    if isinstance(f, Not):
        return not eval_fml(f.sub, env)
    if isinstance(f, BinFml):
        l = eval_fml(f.left, env)
        if f.op == "&&":
            return l and eval_fml(f.right, env)
        if f.op == "||":
            return l or eval_fml(f.right, env)
        if f.op == "->":
            return (not l) or eval_fml(f.right, env)
        return l == eval_fml(f.right, env)
    raise InexactEval("non-arithmetic formula")


def eval_sequent(gamma: Sequence[Fml], delta: Sequence[Fml], env: Mapping[str, Fraction]) -> bool:
    if not all(eval_fml(g, env) for g in gamma):
        return True
    return any(eval_fml(d, env) for d in delta)


# ---------------------------------------------------------------------------
# Oracles


class LinearOracle:
    """Exact decision on the linear fragment via Fourier-Motzkin; test-only
    programs are unfolded and outermost quantifiers stripped first."""

    def __init__(self) -> None:
        self._cache: dict[str, Verdict] = {}

    def decide(self, gamma: Sequence[Fml], delta: Sequence[Fml]) -> Verdict:
        key = canonical_hash(gamma, delta)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        verdict = self._decide(gamma, delta)
        self._cache[key] = verdict
        return verdict

    def _decide(self, gamma: Sequence[Fml], delta: Sequence[Fml]) -> Verdict:
        taken = set()
        for f in list(gamma) + list(delta):
            taken |= sx.all_vars(f)
        norm_gamma, norm_delta = [], []
        for f in gamma:
            f = _unfold_boxes(f)
            f = _strip_outer_quant(f, "exists", taken)
            norm_gamma.append(f)
        for f in delta:
            f = _unfold_boxes(f)
            f = _strip_outer_quant(f, "forall", taken)
            norm_delta.append(f)

        # counterexample search: Gamma and not(any Delta)
        problem: Fml | None = None
        for f in norm_gamma:
            problem = f if problem is None else BinFml("&&", problem, f)
        for f in norm_delta:
            neg = Not(f)
            problem = neg if problem is None else BinFml("&&", problem, neg)
        if problem is None:
            return Invalid({})  # empty sequent: false
        cubes = _dnf(problem, True)
        if cubes is None:
            return Unknown("not in the arithmetic fragment")
        for raw_cube in cubes:
            expanded = _expand_disequalities(raw_cube)
            for cube in expanded:
                constraints: list[Constraint] = []
                for atom, positive in cube:
                    cs = _atom_constraints(atom, positive)
                    if cs is None:
                        return Unknown("nonlinear atom " + sx.print_atom(atom))
                    constraints.extend(cs)
                witness = _fm_satisfiable(constraints)
                if witness is not None:
                    break
            else:
                continue
            if witness is not None:
                try:
                    if eval_sequent(norm_gamma, norm_delta, witness):
                        raise AssertionError(
                            "FM witness does not falsify the sequent: "
                            + canonical_sequent_text(gamma, delta)
                        )
                except InexactEval:
                    pass
                return Invalid(dict(witness))
        return VALID

    def da_hint(self, gamma, delta):
        return None


class SamplingOracle:
    """Random-assignment falsifier: Invalid on an exactly-evaluated
    counterexample, Unknown otherwise."""

    def __init__(self, samples: int = 200, seed: int = 20240601):
        self.samples = samples
        self.seed = seed

    def decide(self, gamma: Sequence[Fml], delta: Sequence[Fml]) -> Verdict:
        variables = set()
        norm_gamma = [_unfold_boxes(f) for f in gamma]
        norm_delta = [_unfold_boxes(f) for f in delta]
        for f in norm_gamma + norm_delta:
            variables |= sx.free_vars(f)
        rng = random.Random(self.seed)
        pool = sorted(variables)
        for _ in range(self.samples):
            env = {
                v: Fraction(rng.randint(-12, 12), rng.randint(1, 4)) for v in pool
            }
            try:
                if not eval_sequent(norm_gamma, norm_delta, env):
                    return Invalid(env)
            except InexactEval:
                continue
        return Unknown("no counterexample found by sampling")

    def da_hint(self, gamma, delta):
        return None


@dataclass
class FixtureEntry:
    key: str
    verdict: str  # valid | invalid | unknown
    da: dict[str, list[str]] = field(default_factory=dict)
    fusions: list[list[str]] = field(default_factory=list)
    witnesses: dict[str, str] = field(default_factory=dict)


class FixtureOracle:
    """Replays recorded verdicts and leaf mutation sets keyed by the
    canonical (label-free) sequent hash."""

    def __init__(self, entries: Iterable[FixtureEntry]):
        self.entries: dict[str, FixtureEntry] = {}
        for e in entries:
            self.entries[e.key] = e

    @staticmethod
    def from_json(data) -> "FixtureOracle":
        if not isinstance(data, list):
            raise FixtureError("fixture file must hold a list of entries")
        entries = []
        for raw in data:
            try:
                entries.append(
                    FixtureEntry(
                        key=raw["key"],
                        verdict=raw["verdict"],
                        da={k: list(v) for k, v in raw.get("da", {}).items()},
                        fusions=[list(g) for g in raw.get("fusions", [])],
                        witnesses=dict(raw.get("witnesses", {})),
                    )
                )
            except KeyError as exc:
                raise FixtureError(f"fixture entry missing {exc}") from exc
        return FixtureOracle(entries)

    @staticmethod
    def load(path) -> "FixtureOracle":
        with open(path, "r", encoding="utf-8") as fh:
            return FixtureOracle.from_json(json.load(fh))

    def decide(self, gamma: Sequence[Fml], delta: Sequence[Fml]) -> Verdict:
        entry = self.entries.get(canonical_hash(gamma, delta))
        if entry is None:
            return Unknown("no fixture entry")
        if entry.verdict == "valid":
            return VALID
        if entry.verdict == "invalid":
            return Invalid({})
        return Unknown("fixture records unknown")

    def da_hint(self, gamma: Sequence[Fml], delta: Sequence[Fml]):
        entry = self.entries.get(canonical_hash(gamma, delta))
        if entry is None or entry.verdict != "valid" or not entry.da:
            return None
        by_name: dict[str, Label] = {}
        for f in list(gamma) + list(delta):
            for labels, _ in sx.atoms_of(f):
                for l in labels:
                    by_name[l.name] = l
        missing = set(entry.da) - set(by_name)
        if missing:
            raise FixtureError(
                f"fixture DA names {sorted(missing)} not among sequent labels"
            )
        entries = [
            ((by_name[name],), [MutationKind(k) for k in ks])
            for name, ks in entry.da.items()
        ]
        for group in entry.fusions:
            unknown = [n for n in group if n not in by_name]
            if unknown:
                raise FixtureError(f"fixture fusion names {unknown} unknown")
            entries.append(([by_name[n] for n in group], ANY))
        tls = TrackedLabelSet(entries)
        witnesses: dict[Label, Atom] = {}
        for name, text in entry.witnesses.items():
            if name not in by_name:
                raise FixtureError(f"fixture witness for unknown label {name}")
            parsed = sx.parse_formula(text)
            if not isinstance(parsed, FAtom):
                raise FixtureError(f"fixture witness {text!r} is not an atom")
            witnesses[by_name[name]] = parsed.atom
        return tls, witnesses


@dataclass
class LeafRecord:
    """One attested leaf: its sequent and the mutation set that held there."""

    gamma: tuple[Fml, ...]
    delta: tuple[Fml, ...]
    tls: TrackedLabelSet
    witnesses: dict[Label, Atom]


class ClosureOracle:
    """Attests mutations of already-attested leaves.

    A recorded leaf with mutation set D is valid under every choice drawn
    from D, so any sequent that aligns with the record atom-by-atom, where
    every changed atom is a recorded mutation admissible for its label, is
    valid as well. Used when re-checking relaxed proofs.
    """

    def __init__(self, records: Iterable[LeafRecord], provider: WeakeningProvider):
        self.records = list(records)
        self.provider = provider

    def decide(self, gamma: Sequence[Fml], delta: Sequence[Fml]) -> Verdict:
        for rec in self.records:
            if self._matches(rec, gamma, delta):
                return VALID
        return Unknown("no attested leaf matches")

    def da_hint(self, gamma, delta):
        for rec in self.records:
            if self._matches(rec, gamma, delta):
                labels = set()
                for f in list(gamma) + list(delta):
                    labels |= sx.labels_of(f)
                return TrackedLabelSet([((l,), {ID}) for l in labels]), {}
        return None

    def _matches(self, rec: LeafRecord, gamma, delta) -> bool:
        if len(rec.gamma) != len(gamma) or len(rec.delta) != len(delta):
            return False
        assigned: dict[Label, MutationKind] = {}
        for base, cand in zip(list(rec.gamma) + list(rec.delta), list(gamma) + list(delta)):
            if not self._fml_matches(rec, base, cand, assigned):
                return False
        # fused labels must have taken the same mutation
        for cls, ks in rec.tls.classes():
            kinds_used = {assigned[l] for l in cls if l in assigned}
            if len(kinds_used) > 1:
                return False
        return True

    def _fml_matches(self, rec: LeafRecord, base, cand, assigned) -> bool:
        base_atoms = sx.atoms_of(base)
        cand_atoms = sx.atoms_of(cand)
        if len(base_atoms) != len(cand_atoms):
            return False
        # shapes must agree once atoms are blanked out
        if sx.strip_labels(_blank(base)) != sx.strip_labels(_blank(cand)):
            return False
        for (labels, atom), (cand_labels, cand_atom) in zip(base_atoms, cand_atoms):
            kind = self._atom_kind(rec, labels, atom, cand_atom)
            if kind is None:
                return False
            for l in labels:
                if assigned.setdefault(l, kind) != kind:
                    return False
        return True

    def _atom_kind(self, rec: LeafRecord, labels, atom, cand_atom) -> MutationKind | None:
        admissible = None
        for l in labels:
            ks = rec.tls.lookup(l)
            if ks is not None:
                admissible = ks if admissible is None else admissible & ks
        if admissible is None:
            admissible = frozenset((ID,))
        if cand_atom == atom:
            return ID if ID in admissible else None
        if cand_atom == TruthAtom(True) and R in admissible:
            return R
        if W in admissible:
            allowed = list(self.provider.candidates(atom))
            for l in labels:
                if l in rec.witnesses:
                    allowed.append(rec.witnesses[l])
            if cand_atom in allowed:
                return W
        return None


def _blank(node):
    blank_f = FAtom(TruthAtom(True), ())
    blank_s = SAtom(sx.RandomAssignAtom("_"), ())

    def fn(leaf):
        return blank_f if isinstance(leaf, FAtom) else blank_s

    return sx.map_atoms(node, fn)


class ChainOracle:
    """Consults backends in order; first definite verdict wins."""

    def __init__(self, backends: Sequence):
        self.backends = list(backends)

    def decide(self, gamma, delta) -> Verdict:
        reason = "no backend answered"
        for b in self.backends:
            v = b.decide(gamma, delta)
            if not isinstance(v, Unknown):
                return v
            reason = v.reason
        return Unknown(reason)

    def da_hint(self, gamma, delta):
        for b in self.backends:
            hint = b.da_hint(gamma, delta)
            if hint is not None:
                return hint
        return None


def make_oracle(spec: str, fixture_dir=None):
    """Build an oracle from a CLI-style spec string."""
    if spec == "linear":
        return ChainOracle([LinearOracle()])
    if spec == "sampling":
        return ChainOracle([SamplingOracle()])
    if spec == "chain":
        return ChainOracle([LinearOracle(), SamplingOracle()])
    if spec.startswith("fixture:"):
        import os

        path = spec[len("fixture:") :]
        if fixture_dir and not os.path.isabs(path) and not os.path.exists(path):
            candidate = os.path.join(fixture_dir, path)
            if os.path.exists(candidate):
                path = candidate
        return ChainOracle([FixtureOracle.load(path), LinearOracle(), SamplingOracle()])
    raise ValueError(f"unknown oracle spec {spec!r}")


# ---------------------------------------------------------------------------
# Dynamic analysis


@dataclass
class DAResult:
    tls: TrackedLabelSet
    witnesses: dict[Label, Atom]


def _goal_classes(gamma: Sequence[Fml], delta: Sequence[Fml]):
    """Fusion classes induced by cross-labeled atoms, with their atoms."""
    parent: dict[Label, Label] = {}

    def find(x: Label) -> Label:
        while parent[x] is not x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    atoms: list[tuple[tuple[Label, ...], Atom]] = []
    for f in list(gamma) + list(delta):
        atoms.extend(sx.atoms_of(f))
    for labels, _ in atoms:
        for l in labels:
            parent.setdefault(l, l)
        for other in labels[1:]:
            ra, rb = find(labels[0]), find(other)
            if ra is not rb:
                if rb.uid < ra.uid:
                    ra, rb = rb, ra
                parent[rb] = ra
    classes: dict[Label, dict] = {}
    for labels, atom in atoms:
        root = find(labels[0])
        cls = classes.setdefault(root, {"labels": set(), "atoms": []})
        cls["labels"].update(labels)
        cls["atoms"].append(atom)
    ordered = sorted(classes.values(), key=lambda c: min(l.uid for l in c["labels"]))
    return ordered


def dynamic_analysis(
    gamma: Sequence[Fml],
    delta: Sequence[Fml],
    chi: TrackedLabelSet,
    provider: WeakeningProvider,
    oracle,
    joint_cap: int = 10,
    joint_samples: int = 1000,
    seed: int = 0,
) -> DAResult:
    """Sound per-label mutation sets for a closed arithmetic leaf.

    Per class: id always; R or W when the single-mutation variant stays
    valid. The candidate product is then verified jointly (exhaustively up
    to joint_cap classes, sampled beyond) and offending kinds pruned.
    Unknown verdicts degrade a kind to absent, never fail the leaf.
    """
    classes = _goal_classes(gamma, delta)
    witnesses: dict[Label, Atom] = {}

    def test(choice: dict[Label, MutationKind]) -> bool:
        try:
            mg, md = apply_sequent(
                MutationChoice(choice, witnesses), gamma, delta, provider
            )
        except MutationError:
            return False
        return isinstance(oracle.decide(mg, md), Valid)

    candidates: list[list[MutationKind]] = []
    for cls in classes:
        kinds = [ID]
        labels = sorted(cls["labels"], key=lambda l: l.uid)
        unique_atoms = []
        for a in cls["atoms"]:
            if a not in unique_atoms:
                unique_atoms.append(a)
        # W first so the enumeration order id < W < R is kept
        w_ok = False
        if all(provider.weakens_as_identity(a) for a in unique_atoms):
            w_ok = True
        elif all(provider.candidates(a) for a in unique_atoms):
            if test({l: W for l in labels}):
                w_ok = True
        if w_ok:
            kinds.append(W)
            for labels_, atom in (
                (lbls, a)
                for f in list(gamma) + list(delta)
                for lbls, a in sx.atoms_of(f)
            ):
                if set(labels_) & cls["labels"]:
                    cands = provider.candidates(atom)
                    if cands:
                        for l in labels_:
                            witnesses.setdefault(l, cands[0])
        if test({l: R for l in labels}):
            kinds.append(R)
        candidates.append(kinds)

    # joint verification with pruning
    def enumerate_joint():
        if len(classes) <= joint_cap:
            yield from itertools.product(*candidates)
            return
        yield tuple(ks[0] for ks in candidates)
        rng = random.Random(seed)
        for _ in range(joint_samples):
            yield tuple(rng.choice(ks) for ks in candidates)

    while True:
        offender = None
        for picks in enumerate_joint():
            if all(k is ID for k in picks):
                continue
            choice: dict[Label, MutationKind] = {}
            for cls, kind in zip(classes, picks):
                for l in cls["labels"]:
                    choice[l] = kind
            if not test(choice):
                offender = picks
                break
        if offender is None:
            break
        for idx in range(len(classes) - 1, -1, -1):
            if offender[idx] is not ID:
                candidates[idx] = [k for k in candidates[idx] if k is not offender[idx]]
                break

    entries = []
    for cls, kinds in zip(classes, candidates):
        ks = frozenset(kinds)
        # input-set guidance: never widen beyond chi (id stays admissible)
        for l in cls["labels"]:
            bound = chi.lookup(l)
            if bound is not None:
                ks = ks & (bound | {ID})
        entries.append((cls["labels"], ks))
    tls = TrackedLabelSet(entries)
    witnesses = {l: a for l, a in witnesses.items() if W in (tls.lookup(l) or ())}
    return DAResult(tls, witnesses)
