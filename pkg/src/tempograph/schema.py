"""Relation label vocabularies, the inverse mapping and dataset profiles."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

NONE = "NONE"

# Every label name the toolkit knows, with its inverse.
_INVERSE_NAMES = {
    "NONE": "NONE",
    "BEFORE": "AFTER",
    "AFTER": "BEFORE",
    "INCLUDES": "IS_INCLUDED",
    "IS_INCLUDED": "INCLUDES",
    "SIMULTANEOUS": "SIMULTANEOUS",
    "VAGUE": "VAGUE",
}

# One member of each invertible pair plus the self-inverse labels.
CANONICAL_NAMES = frozenset({"BEFORE", "INCLUDES", "SIMULTANEOUS", "VAGUE"})


class SchemaError(ValueError):
    """Raised for unknown labels, unknown profiles or profile mismatches."""


@dataclass(frozen=True)
class RelationLabel:
    id: int
    name: str

    def __str__(self) -> str:
        return self.name


LabelLike = Union[RelationLabel, int, str]


class DatasetProfile:
    """A closed, ordered label vocabulary with NONE at id 0.

    Label ids are dense (``0..L``).  The inverse mapping is stored both as a
    dict and as an integer lookup array so that whole matrices of label ids
    can be inverted in one indexing operation.
    """

    def __init__(self, name: str, label_names: Iterable[str]):
        names = [NONE] + [n for n in label_names if n != NONE]
        if len(set(names)) != len(names):
            raise SchemaError(f"profile {name!r}: duplicate label names")
        for n in names:
            if n not in _INVERSE_NAMES:
                raise SchemaError(f"profile {name!r}: unknown label {n!r}")
            if _INVERSE_NAMES[n] not in names:
                raise SchemaError(
                    f"profile {name!r}: label {n!r} present without its inverse "
                    f"{_INVERSE_NAMES[n]!r}"
                )
        self.name = name
        self.labels = tuple(RelationLabel(i, n) for i, n in enumerate(names))
        self._by_name = {lab.name: lab for lab in self.labels}
        inv = np.array([self._by_name[_INVERSE_NAMES[n]].id for n in names], dtype=np.int64)
        inv.setflags(write=False)
        self.inverse_ids = inv
        self.canonical_set = frozenset(n for n in names if n in CANONICAL_NAMES)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.labels)

    @property
    def n_relations(self) -> int:
        """Number of non-NONE labels."""
        return len(self.labels) - 1

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, DatasetProfile) and (self.name, self.names) == (
            other.name,
            other.names,
        )

    def __hash__(self) -> int:
        return hash((self.name, self.names))

    def __repr__(self) -> str:
        return f"DatasetProfile({self.name!r}, {list(self.names[1:])!r})"

    def label(self, x: LabelLike) -> RelationLabel:
        if isinstance(x, RelationLabel):
            if x.id >= len(self.labels) or self.labels[x.id] != x:
                raise SchemaError(f"label {x} is not part of profile {self.name!r}")
            return x
        if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
            if not 0 <= int(x) < len(self.labels):
                raise SchemaError(f"unknown label id {x} for profile {self.name!r}")
            return self.labels[int(x)]
        if isinstance(x, str):
            try:
                return self._by_name[x]
            except KeyError:
                raise SchemaError(f"unknown label {x!r} for profile {self.name!r}") from None
        raise SchemaError(f"cannot interpret {x!r} as a relation label")

    def id_of(self, x: LabelLike) -> int:
        return self.label(x).id

    def inverse(self, x: LabelLike) -> RelationLabel:
        return self.labels[self.inverse_ids[self.label(x).id]]

    def is_canonical(self, x: LabelLike) -> bool:
        lab = self.label(x)
        if lab.id == 0:
            raise SchemaError("NONE has no canonical direction")
        return lab.name in self.canonical_set

    def is_self_inverse(self, x: LabelLike) -> bool:
        lab = self.label(x)
        return self.inverse_ids[lab.id] == lab.id

    def to_dict(self) -> dict:
        return {"name": self.name, "labels": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetProfile":
        """Rebuild a serialized profile, checking it against the registry."""
        prof = profile(d["name"])
        if list(prof.names) != list(d["labels"]):
            raise SchemaError(
                f"profile {d['name']!r} label order mismatch: stored {d['labels']}, "
                f"registered {list(prof.names)}"
            )
        return prof


_REGISTRY: dict[str, DatasetProfile] = {}
_REGISTRY_LOCK = threading.Lock()


def register_profile(name: str, label_names: Iterable[str]) -> DatasetProfile:
    prof = DatasetProfile(name, label_names)
    with _REGISTRY_LOCK:
        if name in _REGISTRY and _REGISTRY[name] != prof:
            raise SchemaError(f"profile {name!r} is already registered with other labels")
        _REGISTRY[name] = prof
    return prof


def profile(name: str | DatasetProfile) -> DatasetProfile:
    if isinstance(name, DatasetProfile):
        return name
    try:
        return _REGISTRY[name]
    except KeyError:
        raise SchemaError(
            f"unknown profile {name!r}; known: {sorted(_REGISTRY)}"
        ) from None


# Label order is fixed; ids index the REL scorer outputs.
TBDENSE = register_profile(
    "tbdense", ["BEFORE", "AFTER", "SIMULTANEOUS", "VAGUE", "INCLUDES", "IS_INCLUDED"]
)
MATRES = register_profile("matres", ["BEFORE", "AFTER", "SIMULTANEOUS", "VAGUE"])
