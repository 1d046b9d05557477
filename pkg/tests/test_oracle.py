import numpy as np
import pytest
from hypothesis import given, assume, strategies as st

from timelogic.core import GroundedPredicate, PredicateKind, Rule
from timelogic.oracle import (
    Interval,
    IntervalTimeline,
    consistent_rules,
    eval_predicate,
    eval_rule,
)

B, D, A = PredicateKind.BEFORE, PredicateKind.DURING, PredicateKind.AFTER


def iv(a, b):
    return Interval(float(a), float(b))


def test_interval_rejects_reversed():
    with pytest.raises(ValueError):
        Interval(3.0, 2.0)


def test_predicate_examples():
    assert eval_predicate(B, iv(1, 2), iv(3, 4))
    # overlap min(4-1, 5-3) = 2 > 0
    assert eval_predicate(D, iv(1, 5), iv(3, 4))
    # boundary touch is before, never during
    assert not eval_predicate(D, iv(1, 2), iv(2, 3))
    assert eval_predicate(B, iv(1, 2), iv(2, 3))


intervals = st.tuples(
    st.floats(1, 50, allow_nan=False), st.floats(0, 20, allow_nan=False)
).map(lambda t: iv(t[0], t[0] + t[1]))


@given(intervals, intervals)
def test_before_after_symmetry(u, v):
    assert eval_predicate(B, u, v) == eval_predicate(A, v, u)
    assert eval_predicate(D, u, v) == eval_predicate(D, v, u)


@given(intervals, intervals)
def test_predicate_exclusivity(u, v):
    # coincident instants satisfy both before and after; exclude that
    # degenerate point configuration
    assume(not (u.duration == 0 and v.duration == 0 and u.start == v.start))
    before, during, after = (eval_predicate(k, u, v) for k in (B, D, A))
    assert not (before and after)
    assert not (during and (before or after))


def make_timeline(entries, horizon=50):
    tl = IntervalTimeline(horizon=horizon)
    for obj, event, a, b in entries:
        tl.add(obj, event, iv(a, b))
    return tl


def test_timeline_rejects_overlapping_occurrences():
    tl = IntervalTimeline(horizon=50)
    tl.add(0, 1, iv(10, 20))
    with pytest.raises(ValueError):
        tl.add(0, 1, iv(15, 25))


def test_eval_rule_examples():
    rule = Rule(body=frozenset({GroundedPredicate(B, 0, 1)}), label=0)
    assert eval_rule(rule, make_timeline([(0, 0, 1, 2), (0, 1, 5, 6)]))
    # missing event
    assert not eval_rule(rule, make_timeline([(0, 0, 1, 2)]))
    two = Rule(
        body=frozenset({GroundedPredicate(B, 0, 1), GroundedPredicate(D, 1, 2)}),
        label=0,
    )
    tl = make_timeline([(0, 0, 1, 2), (0, 1, 4, 8), (0, 2, 6, 7)])
    assert eval_rule(two, tl)


def test_eval_rule_searches_occurrences_and_objects():
    rule = Rule(body=frozenset({GroundedPredicate(B, 0, 1)}), label=0)
    # only the second occurrence of event 0, on another object, is before
    tl = make_timeline([(0, 0, 30, 40), (1, 0, 1, 2), (0, 1, 5, 6)])
    assert eval_rule(rule, tl)


def test_consistent_rules_examples():
    rules = [
        Rule(body=frozenset({GroundedPredicate(B, 0, 1)}), label=0),
        Rule(body=frozenset({GroundedPredicate(B, 0, 2)}), label=1),
    ]
    empty = IntervalTimeline(horizon=50)
    assert consistent_rules(empty, rules).tolist() == [0, 0]
    # timeline built for rule 0 where event 2 also happens to follow event 0
    tl = make_timeline([(0, 0, 1, 2), (0, 1, 5, 6), (0, 2, 8, 9)])
    assert consistent_rules(tl, rules).tolist() == [1, 1]


def test_consistent_rules_monotone_under_new_occurrences():
    rules = [
        Rule(body=frozenset({GroundedPredicate(B, 0, 1)}), label=0),
        Rule(body=frozenset({GroundedPredicate(D, 1, 2)}), label=1),
    ]
    tl = make_timeline([(0, 0, 1, 2), (0, 1, 5, 6)])
    base = consistent_rules(tl, rules)
    tl.add(0, 2, iv(5, 7))
    richer = consistent_rules(tl, rules)
    assert np.all(richer >= base)


def test_consistent_rules_requires_candidates():
    with pytest.raises(ValueError):
        consistent_rules(IntervalTimeline(horizon=10), [])
