import numpy as np
import pytest
from hypothesis import given, strategies as st

from timelogic.core import (
    EventStream,
    GroundedPredicate,
    PredicateKind,
    Rule,
    canonicalize,
    enumerate_canonical_predicates,
    predicate_from_index,
    predicate_index,
    unique_rule_space,
)

BEFORE, DURING, AFTER = PredicateKind.BEFORE, PredicateKind.DURING, PredicateKind.AFTER


def test_kind_codes_stable():
    assert [int(k) for k in PredicateKind] == [0, 1, 2]


def test_canonicalize_examples():
    assert canonicalize(GroundedPredicate(AFTER, 3, 1)) == GroundedPredicate(BEFORE, 1, 3)
    assert canonicalize(GroundedPredicate(DURING, 5, 2)) == GroundedPredicate(DURING, 2, 5)
    assert canonicalize(GroundedPredicate(BEFORE, 1, 3)) == GroundedPredicate(BEFORE, 1, 3)


predicates = st.builds(
    GroundedPredicate,
    kind=st.sampled_from(list(PredicateKind)),
    u=st.integers(0, 9),
    v=st.integers(0, 9),
)


@given(predicates)
def test_canonicalize_idempotent(p):
    assert canonicalize(canonicalize(p)) == canonicalize(p)


def test_predicate_index_examples():
    assert predicate_index(GroundedPredicate(BEFORE, 0, 1), 14) == 3
    assert predicate_index(GroundedPredicate(DURING, 0, 0), 14) == 1


def test_predicate_index_rejects_out_of_range():
    with pytest.raises(ValueError):
        predicate_index(GroundedPredicate(BEFORE, 0, 7), 5)


def test_predicate_index_bijection():
    seen = set()
    for kind in PredicateKind:
        for u in range(5):
            for v in range(5):
                p = GroundedPredicate(kind, u, v)
                idx = predicate_index(p, 5)
                assert predicate_from_index(idx, 5) == p
                seen.add(idx)
    assert seen == set(range(5 * 5 * 3))


def test_unique_rule_space_values():
    assert unique_rule_space(14, 3, 1) == 301
    assert unique_rule_space(2, 3, 1) == 7
    assert unique_rule_space(14, 3, 2) == 90601


def test_unique_rule_space_no_overflow():
    # must stay exact far beyond 64-bit range
    big = unique_rule_space(100, 3, 9)
    assert big == (100 * 100 + 100 * 101 // 2) ** 9


@pytest.mark.parametrize("events", [1, 2, 3, 4, 5])
def test_unique_rule_space_matches_enumeration(events):
    assert unique_rule_space(events, 3, 1) == len(
        enumerate_canonical_predicates(events)
    )


def test_rule_requires_nonempty_body():
    with pytest.raises(ValueError):
        Rule(body=frozenset(), label=0)


def test_rule_canonical_body_collapses_mirrors():
    r = Rule(
        body=frozenset(
            {GroundedPredicate(BEFORE, 0, 1), GroundedPredicate(AFTER, 1, 0)}
        ),
        label=0,
    )
    assert r.canonical_body() == frozenset({GroundedPredicate(BEFORE, 0, 1)})


def test_event_stream_validation():
    ok = EventStream(scores=np.zeros((1, 2, 3)))
    assert (ok.num_objects, ok.num_events, ok.horizon) == (1, 2, 3)
    with pytest.raises(ValueError):
        EventStream(scores=np.full((1, 2, 3), 1.5))
    with pytest.raises(ValueError):
        EventStream(scores=np.zeros((2, 3)))
