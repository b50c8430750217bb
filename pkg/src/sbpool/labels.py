"""Two-level label hierarchy: build, query, and serialize.

A :class:`LabelTree` maps every fine class to exactly one coarse parent.
Index assignment is first-appearance order over the input pairs, which
makes builds deterministic.  The set of fine classes outside a sample's
coarse class is always derived from ``parent`` on demand rather than
stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ConflictingParent, EmptyInput, IndexOutOfRange, MalformedDocument


@dataclass(frozen=True)
class LabelTree:
    """Immutable fine -> coarse hierarchy; safe to share across readers."""

    coarse_names: tuple[str, ...]
    fine_names: tuple[str, ...]
    parent: tuple[int, ...]  # fine index -> coarse index

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_names)

    @property
    def n_fine(self) -> int:
        return len(self.fine_names)

    def parent_of(self, fine: int) -> int:
        if not 0 <= fine < self.n_fine:
            raise IndexOutOfRange(f"fine index {fine} not in [0, {self.n_fine})")
        return self.parent[fine]

    def fine_children(self, coarse: int) -> tuple[int, ...]:
        if not 0 <= coarse < self.n_coarse:
            raise IndexOutOfRange(f"coarse index {coarse} not in [0, {self.n_coarse})")
        return tuple(f for f, p in enumerate(self.parent) if p == coarse)

    def other_fines(self, fine: int) -> tuple[int, ...]:
        """Fine indices whose parent differs from ``fine``'s parent."""
        p = self.parent_of(fine)
        return tuple(f for f, q in enumerate(self.parent) if q != p)

    def to_json_obj(self) -> dict:
        return {
            "coarse": list(self.coarse_names),
            "fine": [
                {"name": name, "parent": par}
                for name, par in zip(self.fine_names, self.parent)
            ],
        }


def build_label_tree(pairs) -> LabelTree:
    """Build a tree from (coarse_name, fine_name) pairs.

    Indices follow first appearance in ``pairs``.  A fine name seen under
    two distinct coarse names raises :class:`ConflictingParent`.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no label pairs given")
    coarse_index: dict[str, int] = {}
    fine_index: dict[str, int] = {}
    parent: list[int] = []
    for coarse_name, fine_name in pairs:
        if coarse_name not in coarse_index:
            coarse_index[coarse_name] = len(coarse_index)
        c = coarse_index[coarse_name]
        if fine_name in fine_index:
            if parent[fine_index[fine_name]] != c:
                raise ConflictingParent(
                    f"fine label {fine_name!r} appears under both "
                    f"{list(coarse_index)[parent[fine_index[fine_name]]]!r} and {coarse_name!r}"
                )
        else:
            fine_index[fine_name] = len(fine_index)
            parent.append(c)
    return LabelTree(
        coarse_names=tuple(coarse_index),
        fine_names=tuple(fine_index),
        parent=tuple(parent),
    )


def is_violation(tree: LabelTree, predicted_fine: int, true_coarse: int) -> bool:
    """True iff the predicted fine class lies outside the true coarse class."""
    if not 0 <= true_coarse < tree.n_coarse:
        raise IndexOutOfRange(f"coarse index {true_coarse} not in [0, {tree.n_coarse})")
    return tree.parent_of(predicted_fine) != true_coarse


def tree_from_json_obj(obj) -> LabelTree:
    """Validate and decode the JSON object form of a tree."""
    if not isinstance(obj, dict):
        raise MalformedDocument("label tree document must be a JSON object")
    coarse = obj.get("coarse")
    fine = obj.get("fine")
    if not isinstance(coarse, list) or not coarse:
        raise MalformedDocument("label tree needs a non-empty 'coarse' name list")
    if not isinstance(fine, list) or not fine:
        raise MalformedDocument("label tree needs a non-empty 'fine' entry list")
    if not all(isinstance(name, str) for name in coarse):
        raise MalformedDocument("coarse names must be strings")
    names: list[str] = []
    parent: list[int] = []
    for entry in fine:
        if not isinstance(entry, dict) or "name" not in entry or "parent" not in entry:
            raise MalformedDocument(f"bad fine entry: {entry!r}")
        name, par = entry["name"], entry["parent"]
        if not isinstance(name, str) or not isinstance(par, int) or isinstance(par, bool):
            raise MalformedDocument(f"bad fine entry: {entry!r}")
        if not 0 <= par < len(coarse):
            raise MalformedDocument(
                f"fine entry {name!r} references unknown coarse index {par}"
            )
        names.append(name)
        parent.append(par)
    if len(set(names)) != len(names):
        raise MalformedDocument("duplicate fine names")
    if len(set(coarse)) != len(coarse):
        raise MalformedDocument("duplicate coarse names")
    childless = set(range(len(coarse))) - set(parent)
    if childless:
        raise MalformedDocument(f"coarse indices without children: {sorted(childless)}")
    return LabelTree(tuple(coarse), tuple(names), tuple(parent))


def serialize_tree(tree: LabelTree) -> str:
    return json.dumps(tree.to_json_obj(), indent=2)


def parse_tree(text: str) -> LabelTree:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    return tree_from_json_obj(obj)
