"""Random linear models with generated proofs, used by the property and
acceptance suites. The proof builder only applies validity-preserving steps
(checked with the exact linear oracle where needed), so every generated
script checks successfully."""
from __future__ import annotations

import random
from fractions import Fraction

from uadl import syntax as sx
from uadl.calculus import ProofNode, Sequent
from uadl.labelsets import ANY, ID, EMPTY, TrackedLabelSet, MutationKind
from uadl.mutation import WeakeningProvider
from uadl.oracle import LinearOracle, Valid
from uadl.syntax import BinFml, BinTerm, Cmp, Const, FAtom, Fml, Var


class TotalComparisonProvider(WeakeningProvider):
    """Exactly one weakening candidate per comparison, so the recorded
    witness and the applied replacement always coincide across branches."""

    def candidates(self, atom):
        if isinstance(atom, Cmp):
            one = Const(Fraction(1))
            if atom.op == ">":
                return [Cmp(">=", atom.lhs, atom.rhs)]
            if atom.op == "<":
                return [Cmp("<=", atom.lhs, atom.rhs)]
            if atom.op == ">=":
                return [Cmp(">=", atom.lhs, BinTerm("-", atom.rhs, one))]
            if atom.op == "<=":
                return [Cmp("<=", atom.lhs, BinTerm("+", atom.rhs, one))]
            if atom.op == "=":
                return [atom]
        return super().candidates(atom)


FUZZ_PROVIDER = TotalComparisonProvider()

VARS = ("x", "y", "z")
OPS = (">", ">=", "<", "<=", "=")

_shared_linear = LinearOracle()


def _decide_valid(gamma, delta) -> bool:
    return isinstance(_shared_linear.decide(list(gamma), list(delta)), Valid)


def random_term(rng: random.Random, vars_: tuple[str, ...]) -> sx.Term:
    coeffs = [(v, rng.randint(-2, 2)) for v in vars_ if rng.random() < 0.7]
    coeffs = [(v, c) for v, c in coeffs if c] or [(rng.choice(vars_), 1)]
    term = None
    for v, c in coeffs:
        part = Var(v) if c == 1 else BinTerm("*", Const(Fraction(c)), Var(v))
        term = part if term is None else BinTerm("+", term, part)
    return term


def random_atom(rng: random.Random, vars_: tuple[str, ...]) -> Cmp:
    return Cmp(
        rng.choice(OPS), random_term(rng, vars_), Const(Fraction(rng.randint(-4, 4)))
    )


def random_formula(rng: random.Random, vars_: tuple[str, ...], n_atoms: int) -> Fml:
    if n_atoms == 1:
        return FAtom(random_atom(rng, vars_), ())
    left_n = rng.randint(1, n_atoms - 1)
    op = rng.choice(("&&", "||", "->", "&&"))
    return BinFml(
        op,
        random_formula(rng, vars_, left_n),
        random_formula(rng, vars_, n_atoms - left_n),
    )


def generate_model(rng: random.Random, max_atoms: int = 6) -> Fml | None:
    """One random valid linear model, or None when the draw is invalid."""
    n = rng.randint(2, max_atoms)
    k = rng.randint(1, min(3, len(VARS)))
    vars_ = VARS[:k]
    f = random_formula(rng, vars_, n)
    if not _decide_valid((), (f,)):
        return None
    alloc = sx.LabelAllocator()
    return sx.assign_labels(f, alloc)


def build_proof(goal: Sequent, rng: random.Random, depth: int = 0) -> ProofNode | None:
    """A proof using andR, impR, orL, WL, WR, cut, id, QE; every applied
    step preserves validity, so the recursion always closes."""
    # occasional structural noise
    if depth < 6 and rng.random() < 0.15 and len(goal.ante) >= 1:
        i = rng.randrange(len(goal.ante))
        rest = goal.ante[:i] + goal.ante[i + 1 :]
        if _decide_valid(rest, goal.succ):
            sub = build_proof(Sequent(rest, goal.succ), rng, depth + 1)
            if sub:
                return ProofNode("WL", {"index": i}, [sub])
    if depth < 6 and rng.random() < 0.1 and len(goal.succ) >= 2:
        i = rng.randrange(len(goal.succ))
        rest = goal.succ[:i] + goal.succ[i + 1 :]
        if _decide_valid(goal.ante, rest):
            sub = build_proof(Sequent(goal.ante, rest), rng, depth + 1)
            if sub:
                return ProofNode("WR", {"index": i}, [sub])
    if depth < 4 and rng.random() < 0.25:
        vars_ = sorted(
            {v for f in goal.ante + goal.succ for v in sx.free_vars(f)}
        ) or ["x"]
        cut_atom = random_atom(rng, tuple(vars_))
        cut_text = sx.print_atom(cut_atom)
        cut_fml = sx.parse_formula(cut_text)
        left = build_proof(
            Sequent(goal.ante + (_relabel(cut_fml),), goal.succ), rng, depth + 1
        )
        right = build_proof(
            Sequent(goal.ante, goal.succ + (_relabel(cut_fml),)), rng, depth + 1
        )
        if left and right:
            return ProofNode("cut", {"formula": cut_text}, [left, right])

    # decompositions
    for i, f in enumerate(goal.succ):
        if isinstance(f, BinFml) and f.op == "->":
            sub = build_proof(
                Sequent(goal.ante + (f.left,), _splice(goal.succ, i, f.right)),
                rng,
                depth + 1,
            )
            return ProofNode("impR", {"index": i}, [sub]) if sub else None
        if isinstance(f, BinFml) and f.op == "&&":
            a = build_proof(
                Sequent(goal.ante, _splice(goal.succ, i, f.left)), rng, depth + 1
            )
            b = build_proof(
                Sequent(goal.ante, _splice(goal.succ, i, f.right)), rng, depth + 1
            )
            return ProofNode("andR", {"index": i}, [a, b]) if a and b else None
    for i, f in enumerate(goal.ante):
        if isinstance(f, BinFml) and f.op == "||":
            a = build_proof(
                Sequent(_splice(goal.ante, i, f.left), goal.succ), rng, depth + 1
            )
            b = build_proof(
                Sequent(_splice(goal.ante, i, f.right), goal.succ), rng, depth + 1
            )
            return ProofNode("orL", {"index": i}, [a, b]) if a and b else None

    # closure
    for a, g in enumerate(goal.ante):
        for s, d in enumerate(goal.succ):
            if sx.equal_mod_labels(g, d):
                return ProofNode("id", {"left": a, "right": s})
    return ProofNode("QE")


def _splice(seq, i, new):
    return seq[:i] + (new,) + seq[i + 1 :]


_scratch_alloc = sx.LabelAllocator()


def _relabel(f: Fml) -> Fml:
    # placeholder labels for validity probing only
    return sx.assign_fresh_labels(f, _scratch_alloc)


def generate_corpus(count: int, seed: int, max_atoms: int = 6):
    """Deterministic list of (model, script) pairs that check successfully."""
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        model = generate_model(rng, max_atoms)
        if model is None:
            continue
        script = build_proof(Sequent((), (model,)), rng)
        if script is None:
            continue
        out.append((model, script))
    return out


def random_chi(rng: random.Random, model: Fml) -> TrackedLabelSet:
    """Input set over a random subset of the model's labels; id is always
    kept admissible so the merge stays consistent."""
    entries = []
    for labels, _ in sx.atoms_of(model):
        for l in labels:
            if rng.random() < 0.5:
                kinds = {ID}
                if rng.random() < 0.5:
                    kinds.add(MutationKind.W)
                if rng.random() < 0.5:
                    kinds.add(MutationKind.R)
                entries.append(((l,), frozenset(kinds)))
    return TrackedLabelSet(entries)


def choice_corpus(count: int, seed: int):
    """Models whose proof folds two box occurrences into one choice program,
    exercising nontrivial fusion classes at an arithmetic leaf."""
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        vars_ = VARS[: rng.randint(1, 2)]
        guard = random_atom(rng, vars_)
        post = random_atom(rng, ("x",))
        t1 = random_atom(rng, ("y",))
        t2 = random_atom(rng, ("y",))
        model_text = (
            f"{sx.print_atom(guard)} -> "
            f"[?({sx.print_atom(t1)})] ({sx.print_atom(post)}) && "
            f"[?({sx.print_atom(t2)})] ({sx.print_atom(post)})"
        )
        alloc = sx.LabelAllocator()
        model = sx.parse_model(model_text, alloc)
        if not _decide_valid((), (model,)):
            continue
        script = ProofNode(
            "impR",
            {},
            [
                ProofNode(
                    "[++]",
                    {"direction": "fold"},
                    [ProofNode("GVR", {}, [ProofNode("QE")])],
                )
            ],
        )
        out.append((model, script))
    return out
