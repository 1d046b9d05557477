import numpy as np
import pytest

from timelogic.core import GroundedPredicate, PredicateKind, Rule, canonicalize
from timelogic.datagen import GenConfig, GeneratedSample, generate, sample_rules, synthesize_sample
from timelogic.oracle import consistent_rules

B, D, A = PredicateKind.BEFORE, PredicateKind.DURING, PredicateKind.AFTER


def small_cfg(**kw):
    base = dict(
        seed=0,
        num_rules=10,
        max_rule_len=1,
        num_events=5,
        horizon=60,
        counts={"train": 12, "val": 4, "test": 4},
    )
    base.update(kw)
    return GenConfig(**base)


def test_sample_rules_full_length1_space():
    rng = np.random.default_rng(0)
    rules = sample_rules(rng, 301, 1, 14)
    bodies = {r.body for r in rules}
    assert len(bodies) == 301
    # bodies are canonical: no after predicates, during arguments sorted
    for body in bodies:
        (p,) = body
        assert p == canonicalize(p)


def test_sample_rules_single():
    rules = sample_rules(np.random.default_rng(1), 1, 1, 4)
    assert len(rules) == 1
    assert len(rules[0].body) == 1


def test_sample_rules_rejects_overdraw():
    with pytest.raises(ValueError, match="7"):
        sample_rules(np.random.default_rng(0), 8, 1, 2)


def test_contradictory_body_never_sampled():
    # pools never contain a body requiring both orders of the same pair
    rules = sample_rules(np.random.default_rng(3), 40, 2, 4)
    for rule in rules:
        canon = rule.canonical_body()
        for p in canon:
            if p.kind == B and p.u != p.v:
                assert GroundedPredicate(B, p.v, p.u) not in canon


def test_synthesize_sample_by_construction():
    cfg = small_cfg()
    pool = sample_rules(np.random.default_rng(0), 10, 1, 5, horizon=60)
    rng = np.random.default_rng(7)
    chosen = [pool[0]]
    sample = synthesize_sample(rng, chosen, pool, cfg)
    assert sample.labels[pool[0].label] == 1
    assert sample.labels.shape == (10,)
    assert 0.0 <= sample.scores.min() and sample.scores.max() <= 1.0


def test_zero_noise_leaves_gaps_exactly_zero():
    cfg = small_cfg(noise_std=0.0)
    pool = sample_rules(np.random.default_rng(0), 10, 1, 5, horizon=60)
    sample = synthesize_sample(np.random.default_rng(9), [pool[0]], pool, cfg)
    covered = np.zeros_like(sample.scores, dtype=bool)
    for (obj, event), ivs in sample.timeline.spans.items():
        for iv in ivs:
            covered[obj, event, int(iv.start) - 1 : int(iv.end)] = True
    assert np.all(sample.scores[~covered] == 0.0)


def test_detection_mean_monte_carlo_band():
    # means centred on the configured detection accuracy
    cfg = small_cfg(detection_means=(0.966,), detection_std=0.02, horizon=200,
                    interval_len=(150, 150))
    pool = [Rule(body=frozenset({GroundedPredicate(D, 0, 0)}), label=0)]
    draws = []
    for seed in range(80):
        sample = synthesize_sample(np.random.default_rng(seed), [pool[0]], pool, cfg)
        (obj, event), ivs = next(iter(sample.timeline.spans.items()))
        iv = ivs[0]
        draws.append(sample.scores[obj, event, int(iv.start) - 1 : int(iv.end)])
    mean = np.concatenate(draws).mean()
    assert 0.955 <= mean <= 0.975


def test_generate_split_sizes_and_selfcheck():
    cfg = small_cfg()
    ds = generate(cfg)
    assert [len(ds.splits[s]) for s in ("train", "val", "test")] == [12, 4, 4]
    for split in ds.splits.values():
        for sample in split:
            recheck = consistent_rules(sample.timeline, ds.rules)
            np.testing.assert_array_equal(recheck, sample.labels)


def test_generate_deterministic_and_parallel_identical():
    cfg = small_cfg()
    one = generate(cfg)
    two = generate(cfg)
    par = generate(cfg, workers=2)
    for a, b in ((one, two), (one, par)):
        for split in a.splits:
            for sa, sb in zip(a.splits[split], b.splits[split]):
                np.testing.assert_array_equal(sa.scores, sb.scores)
                np.testing.assert_array_equal(sa.labels, sb.labels)
    assert [str(r) for r in one.rules] == [str(r) for r in par.rules]


def test_mean_active_labels_grows_with_rules_per_sample():
    lean = generate(small_cfg(rules_per_sample=1))
    rich = generate(small_cfg(rules_per_sample=3))
    assert rich.mean_active_labels() > lean.mean_active_labels()


def test_self_pair_before_rule_is_placeable_as_instant():
    rule = Rule(body=frozenset({GroundedPredicate(B, 1, 1)}), label=0)
    cfg = small_cfg(num_rules=1)
    sample = synthesize_sample(np.random.default_rng(0), [rule], [rule], cfg)
    ivs = sample.timeline.occurrences(1)
    assert len(ivs) == 1 and ivs[0].duration == 0.0
    assert sample.labels[0] == 1
