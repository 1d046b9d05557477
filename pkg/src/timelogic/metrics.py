"""Rule-recovery and multi-label ranking metrics.

Rule equality is up to canonicalisation by default (before(a,b) matches a
ranked after(b,a)); a strict mode compares bodies verbatim.  Average
precision uses the uninterpolated precision-at-each-positive convention
with ties broken by sample index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Rule


def _same_rule(a: Rule, b: Rule, strict: bool) -> bool:
    if strict:
        return a.body == b.body
    return a.canonical_body() == b.canonical_body()


def rule_rank(
    ranked: list[Rule], truth: Rule, strict: bool = False
) -> int | None:
    """1-based rank of the true rule in a ranked list, None if absent."""
    for pos, rule in enumerate(ranked, start=1):
        if _same_rule(rule, truth, strict):
            return pos
    return None


def hits_at_k(
    ranked: dict[int, list[Rule]],
    truth: dict[int, Rule],
    k: int,
    strict: bool = False,
) -> float:
    """Fraction of labels whose true rule appears in that label's top k."""
    if not truth:
        raise ValueError("no ground-truth rules supplied")
    hit = 0
    for label, true_rule in truth.items():
        rank = rule_rank(ranked.get(label, [])[:k], true_rule, strict)
        if rank is not None:
            hit += 1
    return hit / len(truth)


def mrr(
    ranked: dict[int, list[Rule]], truth: dict[int, Rule], strict: bool = False
) -> float:
    """Mean over labels of 1/rank of the true rule (0 when absent)."""
    if not truth:
        raise ValueError("no ground-truth rules supplied")
    total = 0.0
    for label, true_rule in truth.items():
        rank = rule_rank(ranked.get(label, []), true_rule, strict)
        if rank is not None:
            total += 1.0 / rank
    return total / len(truth)


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Uninterpolated AP for one label over samples; ties by sample index."""
    order = np.argsort(-scores, kind="stable")
    flags = positives[order].astype(bool)
    if not flags.any():
        raise ValueError("average_precision needs at least one positive")
    ranks = np.flatnonzero(flags) + 1
    found = np.arange(1, ranks.size + 1)
    return float((found / ranks).mean())


def mean_average_precision(
    scores: np.ndarray, labels: np.ndarray
) -> tuple[float, list[int]]:
    """Mean AP over labels; labels without positives are skipped and listed.

    `scores` and `labels` are [num_samples, num_labels].
    """
    skipped: list[int] = []
    values: list[float] = []
    for r in range(labels.shape[1]):
        pos = labels[:, r]
        if not pos.any():
            skipped.append(r)
            continue
        values.append(average_precision(scores[:, r], pos))
    if not values:
        raise ValueError("every label was missing positives")
    return float(np.mean(values)), skipped


@dataclass
class EvalReport:
    hits: dict[int, float]  # k -> Hits@k
    map_score: float
    mrr_score: float
    per_label_rank: dict[int, int | None]
    per_length: dict[int, dict[int, float]]  # body length -> {k: Hits@k}
    labels_per_length: dict[int, int]
    skipped_labels: list[int] = field(default_factory=list)

    HITS_KS = (1, 5, 10)


def evaluate_rules(
    ranked: dict[int, list[Rule]],
    truth: dict[int, Rule],
    strict: bool = False,
    ks: tuple[int, ...] = EvalReport.HITS_KS,
) -> tuple[dict[int, float], float, dict[int, int | None], dict[int, dict[int, float]], dict[int, int]]:
    """Hits@k overall and broken down by true body length, MRR, and ranks."""
    hits = {k: hits_at_k(ranked, truth, k, strict) for k in ks}
    score = mrr(ranked, truth, strict)
    ranks = {
        label: rule_rank(ranked.get(label, []), rule, strict)
        for label, rule in truth.items()
    }
    by_length: dict[int, dict[int, Rule]] = {}
    for label, rule in truth.items():
        by_length.setdefault(len(rule.canonical_body()), {})[label] = rule
    per_length = {
        length: {k: hits_at_k(ranked, subset, k, strict) for k in ks}
        for length, subset in sorted(by_length.items())
    }
    counts = {length: len(subset) for length, subset in sorted(by_length.items())}
    return hits, score, ranks, per_length, counts
