"""Core data model: event streams, grounded temporal predicates, rules.

A grounded predicate applies one of three temporal relations
(before / during / after) to an ordered pair of atomic events.  A rule is
a conjunction of grounded predicates attached to one composite-event
label.  This module also provides the flat index encoding used by the
model's pairwise relation tensor and the closed-form count of the
canonical rule search space.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class PredicateKind(IntEnum):
    """The three temporal relations, with stable integer codes."""

    BEFORE = 0
    DURING = 1
    AFTER = 2


KIND_NAMES = {
    PredicateKind.BEFORE: "before",
    PredicateKind.DURING: "during",
    PredicateKind.AFTER: "after",
}
KIND_BY_NAME = {v: k for k, v in KIND_NAMES.items()}


@dataclass(frozen=True, order=True)
class GroundedPredicate:
    """A temporal relation applied to an ordered event pair (u, v)."""

    kind: PredicateKind
    u: int
    v: int

    def __str__(self) -> str:
        return f"{KIND_NAMES[self.kind]}({self.u}, {self.v})"


@dataclass(frozen=True)
class Rule:
    """A conjunction of grounded predicates tied to one label index."""

    body: frozenset[GroundedPredicate]
    label: int = -1

    def __post_init__(self):
        if len(self.body) < 1:
            raise ValueError("rule body must contain at least one predicate")

    def canonical_body(self) -> frozenset[GroundedPredicate]:
        return frozenset(canonicalize(p) for p in self.body)

    def __str__(self) -> str:
        parts = sorted(self.body)
        return " AND ".join(str(p) for p in parts)


@dataclass
class EventStream:
    """Dense probabilistic atomic-event scores over objects x events x time."""

    scores: np.ndarray  # [k, |X|, T], values in [0, 1]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3:
            raise ValueError("scores must be [objects, events, time]")
        k, x, t = self.scores.shape
        if k < 1 or x < 1 or t < 1:
            raise ValueError("all stream dimensions must be >= 1")
        if self.scores.min() < 0.0 or self.scores.max() > 1.0:
            raise ValueError("scores must lie in [0, 1]")

    @property
    def num_objects(self) -> int:
        return self.scores.shape[0]

    @property
    def num_events(self) -> int:
        return self.scores.shape[1]

    @property
    def horizon(self) -> int:
        return self.scores.shape[2]


def canonicalize(p: GroundedPredicate) -> GroundedPredicate:
    """Map a predicate to its canonical representative.

    after(u, v) and before(v, u) express the same relation, as do
    during(u, v) and during(v, u); canonical form keeps before with its
    argument order, flips after into before, and sorts during arguments.
    Idempotent.
    """
    if p.kind == PredicateKind.AFTER:
        return GroundedPredicate(PredicateKind.BEFORE, p.v, p.u)
    if p.kind == PredicateKind.DURING and p.u > p.v:
        return GroundedPredicate(PredicateKind.DURING, p.v, p.u)
    return p


def predicate_index(p: GroundedPredicate, num_events: int) -> int:
    """Flat index of a grounded predicate in the vectorised relation tensor.

    Layout is u-major, then v, then kind: idx = (u * |X| + v) * 3 + kind.
    The same ordering is used when flattening the pairwise relation matrix,
    so index i here addresses entry i of that vector.
    """
    if not (0 <= p.u < num_events and 0 <= p.v < num_events):
        raise ValueError(f"event index out of range for |X|={num_events}: {p}")
    return (p.u * num_events + p.v) * 3 + int(p.kind)


def predicate_from_index(idx: int, num_events: int) -> GroundedPredicate:
    """Inverse of :func:`predicate_index`."""
    d = num_events * num_events * 3
    if not (0 <= idx < d):
        raise ValueError(f"flat index {idx} out of range for |X|={num_events}")
    kind = PredicateKind(idx % 3)
    pair = idx // 3
    return GroundedPredicate(kind, pair // num_events, pair % num_events)


def unique_rule_space(num_events: int, num_predicates: int, length: int) -> int:
    """Count of rule combinations of exactly `length` predicates.

    With E events and P relation kinds where symmetric pairs collapse
    (before/after are mirror images, during is order-free), the base count
    is floor(P/2) * E^2 + E*(E+1)/2 and the space for an n-predicate body
    is that base raised to n.  Computed in exact integer arithmetic.

    Note the formula counts ordered n-tuples of canonical predicates, not
    unordered conjunctions, so for n > 1 it over-counts bodies that differ
    only by predicate order.
    """
    if num_events < 1:
        raise ValueError("num_events must be >= 1")
    if num_predicates < 2:
        raise ValueError("num_predicates must be >= 2")
    if length < 1:
        raise ValueError("length must be >= 1")
    e = int(num_events)
    base = (num_predicates // 2) * e * e + e * (e + 1) // 2
    return base ** int(length)


def enumerate_canonical_predicates(num_events: int) -> list[GroundedPredicate]:
    """All distinct canonical grounded predicates over `num_events` events."""
    seen: dict[GroundedPredicate, None] = {}
    for kind in PredicateKind:
        for u in range(num_events):
            for v in range(num_events):
                seen.setdefault(canonicalize(GroundedPredicate(kind, u, v)), None)
    return list(seen)
