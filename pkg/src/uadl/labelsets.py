"""Mutation-tracking label sets: the chi/Sigma/Omega/Theta objects.

A tracked set partitions its labels into fusion classes; all members of a
class share one mutation set and must take the same mutation when a choice
is drawn. Merging intersects mutation sets on shared labels and unions
fusion classes; set difference removes labels from their classes.
"""
from __future__ import annotations

import itertools
from enum import Enum
from typing import Iterable, Iterator, Mapping

from .syntax import Label


class MutationKind(str, Enum):
    ID = "id"
    W = "W"
    R = "R"


ID, W, R = MutationKind.ID, MutationKind.W, MutationKind.R
ANY: frozenset[MutationKind] = frozenset((ID, W, R))
KIND_ORDER = (ID, W, R)

MutationSet = frozenset


def kinds(*ks: MutationKind | str) -> frozenset[MutationKind]:
    return frozenset(MutationKind(k) for k in ks)


class MergeConflictError(Exception):
    """Merge produced an empty mutation set for a label.

    Every rule-produced set keeps id for every label, so this signals an
    inconsistent input rather than a legitimate analysis outcome.
    """

    def __init__(self, label: Label):
        self.label = label
        super().__init__(f"empty mutation set for label {label.name} after merge")


class TrackedLabelSet:
    """Immutable map label -> mutation set with fusion classes."""

    __slots__ = ("_classes", "_index")

    def __init__(
        self, entries: Iterable[tuple[Iterable[Label], Iterable[MutationKind]]] = ()
    ):
        # union-find over labels; class mutation set = intersection of the
        # sets of every entry touching the class
        parent: dict[Label, Label] = {}

        def find(x: Label) -> Label:
            while parent[x] is not x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a: Label, b: Label) -> None:
            ra, rb = find(a), find(b)
            if ra is not rb:
                if rb.uid < ra.uid:
                    ra, rb = rb, ra
                parent[rb] = ra

        pending: list[tuple[list[Label], frozenset[MutationKind]]] = []
        for labels, ks in entries:
            labels = list(labels)
            if not labels:
                continue
            ks = frozenset(MutationKind(k) for k in ks)
            pending.append((labels, ks))
            for lbl in labels:
                parent.setdefault(lbl, lbl)
            for other in labels[1:]:
                union(labels[0], other)

        members: dict[Label, list[Label]] = {}
        for lbl in parent:
            members.setdefault(find(lbl), []).append(lbl)
        sets: dict[Label, frozenset[MutationKind]] = {}
        for labels, ks in pending:
            root = find(labels[0])
            sets[root] = sets[root] & ks if root in sets else ks
        classes: list[tuple[frozenset[Label], frozenset[MutationKind]]] = []
        index: dict[Label, int] = {}
        for root in sorted(members, key=lambda l: l.uid):
            ks = sets[root]
            if not ks:
                raise MergeConflictError(root)
            idx = len(classes)
            classes.append((frozenset(members[root]), ks))
            for lbl in members[root]:
                index[lbl] = idx
        self._classes = tuple(classes)
        self._index = index

    # --- queries

    def __contains__(self, label: Label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._index)

    def __bool__(self) -> bool:
        return bool(self._index)

    def labels(self) -> set[Label]:
        return set(self._index)

    def classes(self) -> tuple[tuple[frozenset[Label], frozenset[MutationKind]], ...]:
        return self._classes

    def lookup(self, label: Label) -> frozenset[MutationKind] | None:
        idx = self._index.get(label)
        return None if idx is None else self._classes[idx][1]

    def fusion_class(self, label: Label) -> frozenset[Label]:
        idx = self._index.get(label)
        return frozenset((label,)) if idx is None else self._classes[idx][0]

    def as_dict(self) -> dict[Label, frozenset[MutationKind]]:
        return {lbl: self._classes[idx][1] for lbl, idx in self._index.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrackedLabelSet):
            return NotImplemented
        return self._canon() == other._canon()

    def _canon(self):
        return frozenset(
            (cls, ks) for cls, ks in self._classes
        )

    def __hash__(self) -> int:
        return hash(self._canon())

    def __repr__(self) -> str:
        parts = []
        for cls, ks in self._classes:
            names = "~".join(sorted(l.name for l in cls))
            kind_s = "any" if ks == ANY else ",".join(k.value for k in KIND_ORDER if k in ks)
            parts.append(f"{names}:{kind_s}")
        return "{" + ", ".join(parts) + "}"

    # --- algebra

    def merge(self, other: "TrackedLabelSet") -> "TrackedLabelSet":
        """Branch combination: intersect mutation sets on shared labels,
        copy one-sided labels, union fusion classes."""
        return TrackedLabelSet(
            [(cls, ks) for cls, ks in self._classes]
            + [(cls, ks) for cls, ks in other._classes]
        )

    def diff(self, dropped: Iterable[Label]) -> "TrackedLabelSet":
        """Remove labels outright; surviving class members keep their set."""
        dropped = set(dropped)
        entries = []
        for cls, ks in self._classes:
            kept = cls - dropped
            if kept:
                entries.append((kept, ks))
        return TrackedLabelSet(entries)

    def restrict(self, keep: Iterable[Label]) -> "TrackedLabelSet":
        """Keep only the given labels (fusion structure among them kept)."""
        keep = set(keep)
        entries = []
        for cls, ks in self._classes:
            kept = cls & keep
            if kept:
                entries.append((kept, ks))
        return TrackedLabelSet(entries)

    def narrow(self, bounds: "TrackedLabelSet") -> "TrackedLabelSet":
        """Intersect mutation sets pointwise with bounds where defined."""
        entries = []
        for cls, ks in self._classes:
            for lbl in cls:
                b = bounds.lookup(lbl)
                if b is not None:
                    ks = ks & b
            entries.append((cls, ks))
        return TrackedLabelSet(entries)

    # --- choices

    def choice_count(self) -> int:
        n = 1
        for _, ks in self._classes:
            n *= len(ks)
        return n

    def enumerate_choices(self) -> Iterator[dict[Label, MutationKind]]:
        """All total assignments, one kind per fusion class, broadcast to
        members; deterministic order (class by least uid, id < W < R)."""
        ordered = [
            (cls, [k for k in KIND_ORDER if k in ks]) for cls, ks in self._classes
        ]
        for picks in itertools.product(*(ks for _, ks in ordered)):
            choice: dict[Label, MutationKind] = {}
            for (cls, _), kind in zip(ordered, picks):
                for lbl in cls:
                    choice[lbl] = kind
            yield choice

    # --- construction helpers

    @staticmethod
    def merge_all(sets: Iterable["TrackedLabelSet"]) -> "TrackedLabelSet":
        out = TrackedLabelSet()
        for s in sets:
            out = out.merge(s)
        return out

    @staticmethod
    def of(pairs: Mapping[Label, Iterable[MutationKind]]) -> "TrackedLabelSet":
        return TrackedLabelSet([((lbl,), ks) for lbl, ks in pairs.items()])

    @staticmethod
    def anys(labels: Iterable[Label]) -> "TrackedLabelSet":
        return TrackedLabelSet([((lbl,), ANY) for lbl in labels])

    # --- JSON

    def to_json(self) -> dict:
        labels: dict[str, dict] = {}
        for cls, ks in self._classes:
            for lbl in cls:
                labels[lbl.name] = {
                    "mutations": [k.value for k in KIND_ORDER if k in ks],
                    "fused_with": sorted(o.name for o in cls if o is not lbl),
                }
        return {"labels": {name: labels[name] for name in sorted(labels)}}

    @staticmethod
    def from_json(data: dict, by_name: Mapping[str, Label]) -> "TrackedLabelSet":
        entries = []
        for name, entry in data.get("labels", {}).items():
            if name not in by_name:
                raise KeyError(f"unknown label '{name}' in label-set JSON")
            group = {name, *entry.get("fused_with", [])}
            for other in group:
                if other not in by_name:
                    raise KeyError(f"unknown label '{other}' in label-set JSON")
            entries.append(
                (
                    [by_name[n] for n in sorted(group)],
                    [MutationKind(k) for k in entry["mutations"]],
                )
            )
        return TrackedLabelSet(entries)


EMPTY = TrackedLabelSet()
