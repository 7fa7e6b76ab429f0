"""Post-proof reporting: classify model atoms by admissible mutations,
verify relaxed models by re-checking, and validate cut diagnostics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import syntax as sx
from .calculus import AnnotatedNode, AnnotatedProof, ProofError, ProofNode, check_proof
from .labelsets import ANY, EMPTY, ID, R, W, MutationKind, TrackedLabelSet
from .mutation import MutationChoice, WeakeningProvider, DEFAULT_PROVIDER, apply
from .oracle import ChainOracle, ClosureOracle, Valid
from .syntax import Atom, Fml, Label


@dataclass
class AtomReport:
    label: Label
    atom_text: str
    mutations: frozenset[MutationKind]
    classification: str  # required | weakenable | removable
    witness: str | None = None
    fused_with: tuple[str, ...] = ()


@dataclass
class CutReport:
    path: tuple[int, ...]
    rule: str
    entries: list[AtomReport]
    verified: bool | None = None


@dataclass
class UsageReport:
    atoms: list[AtomReport]
    cuts: list[CutReport]

    def to_json(self) -> dict:
        def atom_json(a: AtomReport) -> dict:
            out = {
                "label": a.label.name,
                "atom": a.atom_text,
                "mutations": [k.value for k in (ID, W, R) if k in a.mutations],
                "classification": a.classification,
            }
            if a.witness:
                out["witness"] = a.witness
            if a.fused_with:
                out["fused_with"] = list(a.fused_with)
            return out

        return {
            "atoms": [atom_json(a) for a in self.atoms],
            "cuts": [
                {
                    "path": list(c.path),
                    "rule": c.rule,
                    "entries": [atom_json(a) for a in c.entries],
                    **({} if c.verified is None else {"verified": c.verified}),
                }
                for c in self.cuts
            ],
        }

    def render(self) -> str:
        lines = []
        for a in self.atoms:
            extra = f" (with {', '.join(a.fused_with)})" if a.fused_with else ""
            witness = f" [weakens to {a.witness}]" if a.witness else ""
            lines.append(
                f"{a.label.name}: {a.atom_text}: {a.classification}{extra}{witness}"
            )
        for c in self.cuts:
            where = ".".join(map(str, c.path)) or "root"
            verdict = (
                ""
                if c.verified is None
                else ("  [verified]" if c.verified else "  [UNSOUND]")
            )
            lines.append(f"cut at {where} ({c.rule}):{verdict}")
            for a in c.entries:
                lines.append(
                    f"  cut atom {a.label.name} ({a.atom_text}): {a.classification}"
                )
        return "\n".join(lines)


def classify(mutations: frozenset[MutationKind]) -> str:
    if R in mutations:
        return "removable"
    if W in mutations:
        return "weakenable"
    return "required"


def _atom_texts(proof: AnnotatedProof) -> dict[Label, str]:
    texts: dict[Label, str] = {}
    for node in proof.nodes():
        for f in node.goal.ante + node.goal.succ:
            for labels, atom in sx.atoms_of(f):
                for l in labels:
                    texts.setdefault(l, sx.print_atom(atom))
    return texts


def _witness_texts(proof: AnnotatedProof) -> dict[Label, str]:
    out: dict[Label, str] = {}
    for rec in proof.leaf_records():
        for l, atom in rec.witnesses.items():
            out.setdefault(l, sx.print_atom(atom))
    return out


def build_report(proof: AnnotatedProof, model: Fml) -> UsageReport:
    """Project the root output onto the model's labels; fresh labels appear
    only under the cut sections."""
    texts = _atom_texts(proof)
    witnesses = _witness_texts(proof)
    model_labels = sorted(sx.labels_of(model), key=lambda l: l.uid)
    sigma = proof.sigma
    atoms = []
    for l in model_labels:
        ks = sigma.lookup(l)
        if ks is None:
            raise ProofError((), f"internal: model label {l.name} missing from output")
        fused = tuple(
            sorted(o.name for o in sigma.fusion_class(l) if o != l)
        )
        atoms.append(
            AtomReport(
                label=l,
                atom_text=texts.get(l, "?"),
                mutations=ks,
                classification=classify(ks),
                witness=witnesses.get(l) if W in ks else None,
                fused_with=fused,
            )
        )
    cuts = []
    for node in proof.nodes():
        if node.xi is None or not node.fresh:
            continue
        entries = []
        for l in sorted(node.fresh, key=lambda x: x.uid):
            ks = node.xi.lookup(l)
            if ks is None:
                continue
            entries.append(
                AtomReport(
                    label=l,
                    atom_text=texts.get(l, "?"),
                    mutations=ks,
                    classification=classify(ks),
                    witness=witnesses.get(l) if W in ks else None,
                    fused_with=tuple(
                        sorted(o.name for o in node.xi.fusion_class(l) if o != l)
                    ),
                )
            )
        cuts.append(CutReport(path=node.path, rule=node.rule, entries=entries))
    return UsageReport(atoms=atoms, cuts=cuts)


# ---------------------------------------------------------------------------
# Choice handling


class ChoiceError(Exception):
    pass


def resolve_choice(
    names_to_kinds: Mapping[str, str],
    proof: AnnotatedProof,
    witnesses_text: Mapping[str, str] | None = None,
) -> MutationChoice:
    by_name = proof.label_names()
    kinds: dict[Label, MutationKind] = {}
    for name, kind in names_to_kinds.items():
        if name not in by_name:
            raise ChoiceError(f"unknown label '{name}'")
        kinds[by_name[name]] = MutationKind(kind)
    witnesses: dict[Label, Atom] = {}
    for name, text in (witnesses_text or {}).items():
        if name not in by_name:
            raise ChoiceError(f"unknown label '{name}' in witnesses")
        parsed = sx.parse_formula(text)
        if not isinstance(parsed, sx.FAtom):
            raise ChoiceError(f"witness {text!r} is not an atom")
        witnesses[by_name[name]] = parsed.atom
    return MutationChoice(kinds, witnesses)


def validate_choice(choice: MutationChoice, sigma: TrackedLabelSet) -> None:
    """A usable choice assigns every label of sigma a kind drawn from its
    mutation set, with fused labels agreeing."""
    for cls, ks in sigma.classes():
        kinds = set()
        for l in cls:
            if l not in choice.kinds:
                raise ChoiceError(f"choice misses label '{l.name}'")
            kinds.add(choice.kinds[l])
        if len(kinds) > 1:
            names = ",".join(sorted(l.name for l in cls))
            raise ChoiceError(f"fused labels {names} take different kinds")
        kind = kinds.pop()
        if kind not in ks:
            names = ",".join(sorted(l.name for l in cls))
            allowed = ",".join(k.value for k in (ID, W, R) if k in ks)
            raise ChoiceError(
                f"kind {kind.value} not admissible for {names} (allowed: {allowed})"
            )
    extra = set(choice.kinds) - sigma.labels()
    if extra:
        names = sorted(l.name for l in extra)
        raise ChoiceError(f"choice mentions labels outside the output set: {names}")


def realizable_kinds(
    sigma: TrackedLabelSet, proof: AnnotatedProof, provider: WeakeningProvider
) -> list[tuple[frozenset[Label], list[MutationKind]]]:
    """Per fusion class, the kinds a replayed choice can actually apply:
    W is kept only when every atom of the class has a weakening, and R is
    dropped for ODE equations (removing one collapses the whole system
    into a test, which no longer matches the original script's rules)."""
    atoms_by_label: dict[Label, list[Atom]] = {}
    for node in proof.nodes():
        for f in node.goal.ante + node.goal.succ:
            for labels, atom in sx.atoms_of(f):
                for l in labels:
                    atoms_by_label.setdefault(l, []).append(atom)
    out = []
    for cls, ks in sigma.classes():
        kinds = [k for k in (ID, W, R) if k in ks]
        atoms = [a for l in cls for a in atoms_by_label.get(l, [])]
        if W in kinds and not all(provider.can_weaken(a) for a in atoms):
            kinds = [k for k in kinds if k is not W]
        if R in kinds and any(isinstance(a, sx.OdeAtom) for a in atoms):
            kinds = [k for k in kinds if k is not R]
        out.append((cls, kinds))
    return out


def sample_choices(
    sigma: TrackedLabelSet,
    proof: AnnotatedProof,
    provider: WeakeningProvider,
    count: int,
    seed: int,
) -> list[MutationChoice]:
    import random

    table = realizable_kinds(sigma, proof, provider)
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        kinds: dict[Label, MutationKind] = {}
        for cls, ks in table:
            kind = rng.choice(ks)
            for l in cls:
                kinds[l] = kind
        out.append(MutationChoice(kinds))
    return out


# ---------------------------------------------------------------------------
# Relaxation verification


_PARAM_RULES = {
    "cut": "formula",
    "cutR": "formula",
    "cutL": "formula",
    "MR": "formula",
    "ML": "formula",
    "dC": "formula",
    "CER": "formula",
    "CEL": "formula",
    "loop": "invariant",
}


def _mutated_script(
    script: ProofNode,
    annotated: AnnotatedNode,
    choice: MutationChoice,
    provider: WeakeningProvider,
) -> ProofNode:
    """Rewrite cut/invariant parameters under the choice, walking the script
    and annotated trees together."""
    params = dict(script.params)
    key = _PARAM_RULES.get(script.rule)
    if key is not None and annotated.labeled_param is not None:
        mutated = apply(choice, annotated.labeled_param, provider)
        params[key] = sx.print_formula(mutated)
    children = [
        _mutated_script(c, a, choice, provider)
        for c, a in zip(script.children, annotated.children)
    ]
    return ProofNode(script.rule, params, children)


def relaxation_oracle(base: AnnotatedProof, oracle, provider: WeakeningProvider):
    """Re-check oracle: attested leaves extended to their mutation closure."""
    closure = ClosureOracle(base.leaf_records(), provider)
    if isinstance(oracle, ChainOracle):
        return ChainOracle([closure] + list(oracle.backends))
    return ChainOracle([closure, oracle])


@dataclass
class RelaxationOutcome:
    ok: bool
    detail: str
    model_text: str | None = None
    proof: AnnotatedProof | None = None


def verify_relaxation(
    model: Fml,
    script: ProofNode,
    choice: MutationChoice,
    oracle,
    provider: WeakeningProvider = DEFAULT_PROVIDER,
    mode: str = "parallel",
    base: AnnotatedProof | None = None,
    jobs: int = 1,
) -> RelaxationOutcome:
    """Apply a choice drawn from the root output set and re-check the proof
    with consistently mutated script parameters."""
    if base is None:
        base = check_proof(model, script, EMPTY, mode, oracle, provider, jobs=jobs)
    try:
        validate_choice(choice, base.sigma)
    except ChoiceError as exc:
        return RelaxationOutcome(False, f"choice rejected: {exc}")
    mutated_model = apply(choice, model, provider)
    mutated_script = _mutated_script(script, base.root, choice, provider)
    recheck_oracle = relaxation_oracle(base, oracle, provider)
    try:
        proof = check_proof(
            mutated_model,
            mutated_script,
            EMPTY,
            mode,
            recheck_oracle,
            provider,
            jobs=jobs,
        )
    except ProofError as exc:
        return RelaxationOutcome(False, f"re-check failed: {exc}")
    return RelaxationOutcome(
        True, "relaxed proof closes", sx.print_model(mutated_model), proof
    )


def verify_cut_mutation(
    node: AnnotatedNode,
    oracle,
    provider: WeakeningProvider = DEFAULT_PROVIDER,
    cap: int = 729,
) -> bool:
    """Every choice from a node's cut-diagnostics set keeps every premise
    sequent valid (Lemma on cut mutation, checked by enumeration)."""
    if node.xi is None:
        raise ValueError("node carries no cut diagnostics")
    count = 0
    for kinds in node.xi.enumerate_choices():
        count += 1
        if count > cap:
            break
        witnesses: dict[Label, Atom] = {}
        for l, kind in kinds.items():
            if kind is not W:
                continue
            for child in node.children:
                for f in child.goal.ante + child.goal.succ:
                    for labels, atom in sx.atoms_of(f):
                        if l in labels and provider.candidates(atom):
                            witnesses.setdefault(l, provider.candidates(atom)[0])
        choice = MutationChoice(kinds, witnesses)
        for child in node.children:
            if not set(kinds) & child.goal.labels():
                continue
            try:
                from .mutation import apply_sequent

                mg, md = apply_sequent(choice, child.goal.ante, child.goal.succ, provider)
            except Exception:
                return False
            if not isinstance(oracle.decide(mg, md), Valid):
                return False
    return True


def cut_nodes(proof: AnnotatedProof) -> list[AnnotatedNode]:
    return [n for n in proof.nodes() if n.xi is not None and n.fresh]
