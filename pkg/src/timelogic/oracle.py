"""Exact interval semantics for temporal predicates and rules.

This is the ground-truth evaluator: the generator uses it to label
synthesized timelines and the tests use it to validate the learned
predicate scores.  Conventions:

  before(u, v)  <=>  u.end <= v.start          (touching counts as before)
  after(u, v)   <=>  v.end <= u.start
  during(u, v)  <=>  min(v.end - u.start, u.end - v.start) > 0
                                               (strictly positive overlap)

A rule holds on a timeline iff each distinct event in its body can be
bound to one of its occurrence intervals (searched across every object)
so that all grounded predicates hold simultaneously.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import GroundedPredicate, PredicateKind, Rule


@dataclass(frozen=True, order=True)
class Interval:
    """Occurrence span of an atomic event; start == end is instantaneous."""

    start: float
    end: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"interval end before start: {self}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class IntervalTimeline:
    """Ground-truth intervals per (object, event), within [1, horizon]."""

    horizon: int
    spans: dict[tuple[int, int], list[Interval]] = field(default_factory=dict)

    def add(self, obj: int, event: int, interval: Interval) -> None:
        if interval.start < 1 or interval.end > self.horizon:
            raise ValueError(f"interval {interval} outside [1, {self.horizon}]")
        existing = self.spans.setdefault((obj, event), [])
        for other in existing:
            if min(other.end, interval.end) > max(other.start, interval.start):
                raise ValueError(
                    f"overlapping occurrences for object {obj} event {event}"
                )
        existing.append(interval)
        existing.sort()

    def occurrences(self, event: int) -> list[Interval]:
        """All occurrence intervals of an event, across every object."""
        out: list[Interval] = []
        for (_, ev), ivs in self.spans.items():
            if ev == event:
                out.extend(ivs)
        out.sort()
        return out


def eval_predicate(kind: PredicateKind, u: Interval, v: Interval) -> bool:
    if kind == PredicateKind.BEFORE:
        return u.end <= v.start
    if kind == PredicateKind.AFTER:
        return v.end <= u.start
    return min(v.end - u.start, u.end - v.start) > 0.0


def eval_rule(rule: Rule, timeline: IntervalTimeline) -> bool:
    """True iff some binding of event occurrences satisfies the whole body."""
    events = sorted({e for p in rule.body for e in (p.u, p.v)})
    pools = [timeline.occurrences(e) for e in events]
    if any(not pool for pool in pools):
        return False
    slot = {e: i for i, e in enumerate(events)}
    for choice in itertools.product(*pools):
        if all(
            eval_predicate(p.kind, choice[slot[p.u]], choice[slot[p.v]])
            for p in rule.body
        ):
            return True
    return False


def consistent_rules(timeline: IntervalTimeline, candidates: list[Rule]) -> np.ndarray:
    """Multi-hot vector: bit r is set iff candidates[r] holds on the timeline."""
    if not candidates:
        raise ValueError("candidate rule set must be nonempty")
    return np.array(
        [1 if eval_rule(r, timeline) else 0 for r in candidates], dtype=np.uint8
    )
