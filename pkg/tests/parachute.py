"""Golden corpus: the parachute model, its proof script, and the recorded
leaf mutation sets that the fixture oracle replays.

The nonlinear leaves (square roots, products of variables) are beyond the
built-in linear procedure, so their verdicts and per-label mutation sets
are recorded here and shipped as a fixture file. The recorded sets follow
the conservative annotations of the worked example this corpus mirrors.
"""
from __future__ import annotations

from uadl import syntax as sx
from uadl.calculus import AnnotatedProof, ProofNode, Sequent, check_proof
from uadl.labelsets import ANY, EMPTY, ID, TrackedLabelSet, MutationKind, W, R
from uadl.mutation import DEFAULT_PROVIDER, MutationChoice
from uadl.oracle import VALID, canonical_hash, FixtureOracle, ChainOracle, LinearOracle

MODEL_TEXT = (
    "@i1 g > 0 && @i2 p > a && @i3 T > 0 && @i4 m < -sqrt(g / p) && @i5 x >= 0 "
    "&& @i6 v < 0 && @i7 v > -sqrt(g / p) && @i8 r = a "
    "-> [((?(@j v - g * T > -sqrt(g / p) && @k r = a && @l x > 100) ++ @m r := p) ; "
    "@n t := 0 ; "
    "{@o1 x' = v, @o2 v' = -g + r * v * v, @o3 t' = 1 & "
    "@p1 t <= T && @p2 x >= 0 && @p3 v < 0})*] "
    "(@q1 x = 0 -> @q2 v >= m)"
)

INVARIANT = "((x >= 0 && v < 0) && x > -1) && v > -sqrt(g / p)"

GHOST = "y' = -1/2 * p * sqrt(v - g / p) * y"

MODEL_LABELS = (
    [f"i{k}" for k in range(1, 9)]
    + ["j", "k", "l", "m", "n", "o1", "o2", "o3", "p1", "p2", "p3", "q1", "q2"]
)

# Root output set of the golden run (label name -> admissible mutations).
OMEGA = {
    "k": ["id"],
    "j": ["id", "W", "R"],
    "l": ["id", "W", "R"],
    "o1": ["id", "W", "R"],
    "o2": ["id"],
    "o3": ["id"],
    "n": ["id"],
    "i7": ["id"],
    "m": ["id", "W", "R"],
    "i5": ["id"],
    "i6": ["id"],
    "p1": ["id", "W", "R"],
    "p2": ["id"],
    "p3": ["id"],
    "i1": ["id", "W", "R"],
    "i2": ["id", "W", "R"],
    "i3": ["id", "W", "R"],
    "i4": ["id", "W", "R"],
    "i8": ["id", "W", "R"],
    "q1": ["id"],
    "q2": ["id"],
}


def build_script() -> ProofNode:
    def leaf(rule="auto"):
        return ProofNode(rule)

    # (3h): peel the differential assignments, then close
    branch_3h = ProofNode(
        "[:=]1",
        {},
        [ProofNode("[:=]1", {}, [ProofNode("[:=]2", {}, [leaf("QE")])])],
    )
    branch_3e = ProofNode("dI", {}, [leaf("QE"), branch_3h])
    branch_3f = ProofNode("dW", {}, [leaf("QE")])
    branch_3d = ProofNode(
        "iG",
        {"var": "v0", "term": "v"},
        [
            ProofNode(
                "assignEq",
                {},
                [
                    ProofNode(
                        "dC",
                        {"formula": "v >= v0 - g * t"},
                        [branch_3e, branch_3f],
                    )
                ],
            )
        ],
    )
    branch_3c = ProofNode("dW", {}, [ProofNode("andR", {}, [leaf(), leaf("R")])])
    chain_3a = ProofNode(
        "[?]",
        {},
        [
            ProofNode(
                "impR",
                {},
                [
                    ProofNode(
                        "[;]",
                        {},
                        [
                            ProofNode(
                                "assignEq",
                                {},
                                [
                                    ProofNode(
                                        "boxAnd",
                                        {},
                                        [
                                            ProofNode(
                                                "andR", {}, [branch_3c, branch_3d]
                                            )
                                        ],
                                    )
                                ],
                            )
                        ],
                    )
                ],
            )
        ],
    )
    branch_3i = ProofNode("dW", {}, [leaf()])
    branch_3j = ProofNode("dG", {"ghost": GHOST}, [leaf()])
    chain_3b = ProofNode(
        "GVR",
        {},
        [
            ProofNode(
                "[;]",
                {},
                [
                    ProofNode(
                        "assignEq",
                        {},
                        [
                            ProofNode(
                                "boxAnd",
                                {},
                                [ProofNode("andR", {}, [branch_3i, branch_3j])],
                            )
                        ],
                    )
                ],
            )
        ],
    )
    branch_3 = ProofNode(
        "[;]",
        {},
        [
            ProofNode(
                "[++]",
                {},
                [ProofNode("andR", {}, [chain_3a, chain_3b])],
            )
        ],
    )
    branch_1 = ProofNode("andR", {}, [leaf(), leaf("R")])
    loop = ProofNode(
        "loop", {"invariant": INVARIANT}, [branch_1, leaf("QE"), branch_3]
    )
    return ProofNode("impR", {}, [loop])


def _any(names):
    return {n: ["id", "W", "R"] for n in names}


# Recorded mutation sets per oracle leaf, in script pre-order.
LEAF_TABLES: list[tuple[str, dict, list, dict]] = [
    (
        "1a",  # A |- (x>=0 && v<0) && x>-1
        {**_any(["i1", "i2", "i3", "i4", "i7", "i8", "u1"]), "i5": ["id"], "i6": ["id"]},
        [],
        {},
    ),
    (
        "1b",  # A |- v > -sqrt(g/p)
        {**_any(["i1", "i2", "i3", "i4", "i5", "i6", "i8"]), "i7": ["id"]},
        [],
        {},
    ),
    (
        "2",  # J |- P
        {**_any(["i5", "i6", "u1"]), "i7": ["id"], "q1": ["id"], "q2": ["id"]},
        [],
        {},
    ),
    (
        "3m",  # staled context, Q |- x>=0 && v<0
        _any(["i5", "i6", "i7", "u1", "j", "k", "l", "n", "p1", "p2", "p3"]),
        [["i5", "p2"], ["i6", "p3"]],
        {},
    ),
    (
        "3n",  # staled context, Q |- x > -1
        {
            **_any(["i5", "i6", "i7", "u1", "j", "k", "l", "n", "p1", "p3"]),
            "p2": ["id", "W"],
        },
        [],
        {"p2": "x >= -1/2"},
    ),
    (
        "3g",  # J, L, t=0, v0=v |- v >= v0 - g*t
        {
            **_any(["i5", "i6", "i7", "u1", "j", "k", "l"]),
            "n": ["id"],
            "u2": ["id"],
            "u3": ["id"],
        },
        [],
        {},
    ),
    (
        "3h",  # J, L, t=0, v0=v |- -g + r*v*v >= -(g*1)
        {
            **_any(["i5", "i6", "i7", "u1", "j", "l", "n", "u2"]),
            "k": ["id"],
            "u3": ["id"],
        },
        [],
        {},
    ),
    (
        "3f",  # staled context, Q && C |- v > -sqrt(g/p)
        {
            **_any(
                ["i5", "i6", "u1", "j", "k", "l", "n", "p1", "p2", "p3", "u3"]
            ),
            "i7": ["id"],
            "u2": ["id"],
        },
        [],
        {},
    ),
    (
        "3i",  # staled J, t0=0, Q |- (x>=0 && v<0) && x>-1
        _any(["i5", "i6", "i7", "u1", "n", "p1", "p2", "p3"]),
        [],
        {},
    ),
    (
        "3j",  # J, t=0 |- [ode + ghost & Q] v > -sqrt(g/p)
        {
            **_any(["i5", "i6", "u1", "n", "o1", "o3", "p1", "p2", "p3"]),
            "i7": ["id"],
            "o2": ["id"],
            "u4": ["id"],
        },
        [],
        {},
    ),
]


class _BootstrapOracle:
    """Closes every leaf with an all-mutations set; used only to discover
    the leaf sequents whose recorded sets the fixture will carry."""

    def decide(self, gamma, delta):
        return VALID

    def da_hint(self, gamma, delta):
        labels = set()
        for f in list(gamma) + list(delta):
            labels |= sx.labels_of(f)
        return TrackedLabelSet([((l,), ANY) for l in labels]), {}


def parse_corpus():
    alloc = sx.LabelAllocator()
    model = sx.parse_model(MODEL_TEXT, alloc)
    return model, alloc


def _oracle_leaves(proof: AnnotatedProof):
    return [n for n in proof.nodes() if n.rule in ("auto", "QE", "R")]


def build_fixture_entries() -> list[dict]:
    """Run the script once against a permissive oracle to obtain the leaf
    sequents, then pair them with the recorded mutation sets. Also attests
    the cut-bearing premises needed by diagnostics replay."""
    model, alloc = parse_corpus()
    script = build_script()
    proof = check_proof(
        model, script, EMPTY, "parallel", _BootstrapOracle(), alloc=alloc,
        diagnostics=True,
    )
    leaves = _oracle_leaves(proof)
    if len(leaves) != len(LEAF_TABLES):
        raise AssertionError(
            f"expected {len(LEAF_TABLES)} oracle leaves, found {len(leaves)}"
        )
    entries = []
    seen = set()
    for node, (name, da, fusions, witnesses) in zip(leaves, LEAF_TABLES):
        have = sorted(l.name for l in node.goal.labels())
        want = sorted(da)
        if have != want:
            raise AssertionError(
                f"leaf {name}: recorded labels {want} but sequent has {have}"
            )
        key = canonical_hash(node.goal.ante, node.goal.succ)
        entry = {"key": key, "verdict": "valid", "da": da}
        if fusions:
            entry["fusions"] = fusions
        if witnesses:
            entry["witnesses"] = witnesses
        entries.append(entry)
        seen.add(key)

    # cut-diagnostics replay: premises of fresh-label rules under every
    # admissible mutation of their fresh labels
    by_name = {l.name: l for n in proof.nodes() for l in n.goal.labels()}
    u1 = by_name["u1"]
    loop_node = proof.root.children[0]
    for kind in (ID, W, R):
        witnesses = {}
        if kind is W:
            witnesses[u1] = sx.parse_formula("x >= -1").atom
        choice = MutationChoice({u1: kind}, witnesses)
        from uadl.mutation import apply_sequent

        for child in loop_node.children:
            mg, md = apply_sequent(choice, child.goal.ante, child.goal.succ)
            key = canonical_hash(mg, md)
            if key not in seen:
                seen.add(key)
                entries.append({"key": key, "verdict": "valid"})
    for node in proof.nodes():
        if node.rule in ("iG", "dC", "dG") and node.fresh:
            for child in node.children:
                key = canonical_hash(child.goal.ante, child.goal.succ)
                if key not in seen:
                    seen.add(key)
                    entries.append({"key": key, "verdict": "valid"})
    return entries


def corpus_oracle(entries=None) -> ChainOracle:
    entries = entries if entries is not None else build_fixture_entries()
    return ChainOracle(
        [FixtureOracle.from_json(entries), LinearOracle()]
    )


def golden_check(mode: str = "parallel", diagnostics: bool = True):
    """Parse, build, and check the corpus; returns (model, script, proof)."""
    model, alloc = parse_corpus()
    script = build_script()
    oracle = corpus_oracle()
    proof = check_proof(
        model, script, EMPTY, mode, oracle, DEFAULT_PROVIDER,
        diagnostics=diagnostics, alloc=alloc,
    )
    return model, script, proof, oracle
