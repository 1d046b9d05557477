"""Per-label rule search over combinations of candidate predicates.

For each label we keep the c highest-weighted predicate indices, enumerate
every combination of 1..n of them (stored as index tuples, never as a
dense matrix), and learn a softmax attention over the combinations whose
weighted sum of predicate scores predicts the label.  The rule for a
label is read off the highest-attention combination.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from . import diff
from .core import Rule, predicate_from_index
from .diff import Value

# Candidate pool sizes per maximum body length 1..4; past experience is
# that longer bodies need smaller pools to keep the combination count sane.
DEFAULT_CANDIDATES_PER_LEN = (100, 100, 30, 25)


def candidates_for_len(n_max: int, table=DEFAULT_CANDIDATES_PER_LEN) -> int:
    return table[min(n_max, len(table)) - 1]


@dataclass(frozen=True)
class CandidateSet:
    """Top-c flat predicate indices for one label, weight-descending."""

    label: int
    indices: tuple[int, ...]


@dataclass
class CombinationSpace:
    """All 1..n-subsets of a candidate set, as sorted index tuples."""

    label: int
    combos: list[tuple[int, ...]]

    @classmethod
    def build(cls, candidates: CandidateSet, max_len: int) -> "CombinationSpace":
        ordered = sorted(candidates.indices)
        combos: list[tuple[int, ...]] = []
        for size in range(1, max_len + 1):
            combos.extend(itertools.combinations(ordered, size))
        return cls(label=candidates.label, combos=combos)

    def __len__(self) -> int:
        return len(self.combos)

    def expected_size(self, c: int, max_len: int) -> int:
        return sum(comb(c, i) for i in range(1, max_len + 1))

    def sum_matrix(self, vec_batch: np.ndarray) -> np.ndarray:
        """Per-combination predicate-score sums for a [b, d] batch -> [b, n_combos]."""
        out = np.empty((vec_batch.shape[0], len(self.combos)))
        pos = 0
        for size, group in itertools.groupby(self.combos, key=len):
            idx = np.array(list(group), dtype=np.intp)
            out[:, pos : pos + idx.shape[0]] = vec_batch[:, idx].sum(axis=2)
            pos += idx.shape[0]
        return out


@dataclass
class AttentionParams:
    """One attention score per combination; softmax of these selects rules."""

    label: int
    s: Value

    @classmethod
    def zeros(cls, space: CombinationSpace) -> "AttentionParams":
        return cls(label=space.label, s=Value(np.zeros(len(space)), requires_grad=True))


def select_candidates(weights: np.ndarray, label: int, c: int) -> CandidateSet:
    """Indices of the c largest weights in column `label`, ties to lower index."""
    col = weights[:, label]
    if c > col.shape[0]:
        raise ValueError(f"c={c} exceeds the predicate space d={col.shape[0]}")
    order = np.argsort(-col, kind="stable")[:c]
    return CandidateSet(label=label, indices=tuple(int(i) for i in order))


def score_label(
    vec_relation: np.ndarray, space: CombinationSpace, attention: AttentionParams,
    delta: float = 1e-6,
) -> Value:
    """Attention-weighted combination score for one sample, clipped to (0, 1).

    A true length-m conjunction sums m near-1 predicate scores, so the raw
    value can exceed 1; the clamp keeps it usable inside cross-entropy.
    """
    sums = space.sum_matrix(vec_relation[None, :])[0]
    a = diff.softmax(attention.s, axis=-1)
    return diff.clamp(diff.dot(diff.as_value(sums), a), delta, 1.0 - delta)


def induce_rule(
    attention: AttentionParams, space: CombinationSpace, num_events: int
) -> Rule:
    """Decode the argmax-attention combination into a rule."""
    j = int(np.argmax(attention.s.data))
    body = frozenset(
        predicate_from_index(i, num_events) for i in space.combos[j]
    )
    return Rule(body=body, label=space.label)


def rank_rules(
    attention: AttentionParams,
    space: CombinationSpace,
    k: int,
    num_events: int,
) -> list[tuple[Rule, float]]:
    """Top-k combinations by attention, decoded, with their softmax weights."""
    if k < 1:
        raise ValueError("k must be >= 1")
    a = _softmax_np(attention.s.data)
    order = np.argsort(-a, kind="stable")[:k]
    out = []
    for j in order:
        body = frozenset(
            predicate_from_index(i, num_events) for i in space.combos[int(j)]
        )
        out.append((Rule(body=body, label=space.label), float(a[int(j)])))
    return out


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()
