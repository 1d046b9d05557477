"""Synthetic event-stream generator with known ground-truth rules.

Per sample: draw j rules from a global pool, place one occurrence interval
per distinct event by rejection sampling until every drawn rule holds,
then rasterise the timeline into per-step detection scores (Gaussian
around a per-class detection accuracy inside intervals, folded Gaussian
noise elsewhere) and label the sample with every pool rule the timeline
satisfies.

Determinism: every sample derives its own rng from
(master seed, split, sample index), so parallel and serial generation
produce bitwise-identical datasets.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import GroundedPredicate, PredicateKind, Rule, canonicalize, unique_rule_space
from .oracle import Interval, IntervalTimeline, consistent_rules, eval_rule

# Table of per-movement-class detection accuracies used as score means,
# cycled across event indices.
DEFAULT_DETECTION_MEANS = (0.769, 0.882, 0.969)

PLACEMENT_RETRIES = 1000
SELECTION_RETRIES = 100


@dataclass
class GenConfig:
    seed: int = 0
    num_rules: int = 100
    max_rule_len: int = 1
    num_events: int = 14
    num_objects: int = 1
    horizon: int = 150
    rules_per_sample: int = 1
    detection_means: tuple[float, ...] = DEFAULT_DETECTION_MEANS
    detection_std: float = 0.02
    noise_std: float = 0.02
    interval_len: tuple[int, int] = (5, 15)
    counts: dict[str, int] = field(
        default_factory=lambda: {"train": 5000, "val": 2500, "test": 2500}
    )

    def __post_init__(self):
        if self.max_rule_len < 1:
            raise ValueError("max_rule_len must be >= 1")
        if self.rules_per_sample < 1:
            raise ValueError("rules_per_sample must be >= 1")
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("split counts must be >= 1")
        if not all(0.0 < m <= 1.0 for m in self.detection_means):
            raise ValueError("detection means must lie in (0, 1]")
        lo, hi = self.interval_len
        if not (0 <= lo <= hi < self.horizon):
            raise ValueError("interval length range must fit the horizon")

    def mean_for_event(self, event: int) -> float:
        return self.detection_means[event % len(self.detection_means)]


@dataclass
class GeneratedSample:
    timeline: IntervalTimeline
    scores: np.ndarray  # [k, |X|, T] float64 in [0, 1]
    labels: np.ndarray  # [|R|] uint8


@dataclass
class GeneratedDataset:
    config: GenConfig
    rules: list[Rule]
    event_names: list[str]
    splits: dict[str, list[GeneratedSample]]

    def mean_active_labels(self, split: str = "train") -> float:
        samples = self.splits[split]
        return float(np.mean([s.labels.sum() for s in samples]))


def _instantaneous_events(bodies: list[frozenset[GroundedPredicate]]) -> set[int]:
    """Events forced to zero duration: before(e, e) holds only for instants."""
    out: set[int] = set()
    for body in bodies:
        for p in body:
            q = canonicalize(p)
            if q.kind == PredicateKind.BEFORE and q.u == q.v:
                out.add(q.u)
    return out


def _place_intervals(
    rng: np.random.Generator,
    rules: list[Rule],
    cfg: GenConfig,
    objects: dict[int, int],
) -> IntervalTimeline | None:
    """Rejection-sample one interval per distinct event until all rules hold."""
    bodies = [r.body for r in rules]
    events = sorted({e for body in bodies for p in body for e in (p.u, p.v)})
    instants = _instantaneous_events(bodies)
    lo, hi = cfg.interval_len
    for _ in range(PLACEMENT_RETRIES):
        tl = IntervalTimeline(horizon=cfg.horizon)
        for e in events:
            length = 0 if e in instants else int(rng.integers(lo, hi + 1))
            start = int(rng.integers(1, cfg.horizon - length + 1))
            tl.add(objects[e], e, Interval(float(start), float(start + length)))
        if all(eval_rule(r, tl) for r in rules):
            return tl
    return None


def sample_rules(
    rng: np.random.Generator,
    count: int,
    max_len: int,
    num_events: int,
    horizon: int = 150,
    interval_len: tuple[int, int] = (5, 15),
) -> list[Rule]:
    """Draw `count` canonically-distinct satisfiable rules.

    Body lengths are uniform in [1, max_len]; a candidate body is kept only
    if a witness timeline satisfying it can be synthesized (contradictions
    like {before(a,b), before(b,a)} are rejected and resampled).
    """
    bound = unique_rule_space(num_events, 3, max_len)
    if count > bound:
        raise ValueError(
            f"cannot draw {count} distinct rules: the length-{max_len} space "
            f"holds only {bound} combinations"
        )
    witness_cfg = GenConfig(
        num_events=num_events,
        max_rule_len=max_len,
        horizon=horizon,
        interval_len=interval_len,
        counts={"train": 1},
    )
    pool: list[Rule] = []
    seen: set[frozenset[GroundedPredicate]] = set()
    attempts = 0
    max_attempts = 20000 * count
    while len(pool) < count:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(
                f"rule sampling stalled after {max_attempts} attempts "
                f"({len(pool)}/{count} rules found)"
            )
        length = int(rng.integers(1, max_len + 1))
        body = frozenset(
            canonicalize(
                GroundedPredicate(
                    PredicateKind(int(rng.integers(0, 3))),
                    int(rng.integers(0, num_events)),
                    int(rng.integers(0, num_events)),
                )
            )
            for _ in range(length)
        )
        if len(body) != length or body in seen:
            continue
        candidate = Rule(body=body, label=len(pool))
        objects = {e: 0 for p in body for e in (p.u, p.v)}
        if _place_intervals(rng, [candidate], witness_cfg, objects) is None:
            continue
        seen.add(body)
        pool.append(candidate)
    return pool


def synthesize_sample(
    rng: np.random.Generator, chosen_rules: list[Rule], pool: list[Rule], cfg: GenConfig
) -> GeneratedSample:
    """Place intervals for the chosen rules and rasterise scores.

    Labels are the closure: every pool rule the synthesized timeline
    satisfies, not just the chosen ones.
    """
    timeline = None
    offending = chosen_rules
    for _ in range(SELECTION_RETRIES):
        events = sorted({e for r in chosen_rules for p in r.body for e in (p.u, p.v)})
        objects = {e: int(rng.integers(0, cfg.num_objects)) for e in events}
        timeline = _place_intervals(rng, chosen_rules, cfg, objects)
        if timeline is not None:
            break
        offending = chosen_rules
        # Conflicting or cramped selection: redraw the per-sample rules.
        chosen_rules = [pool[int(rng.integers(0, len(pool)))] for _ in chosen_rules]
    if timeline is None:
        raise RuntimeError(
            "interval placement failed (horizon too small?) for rules: "
            + "; ".join(str(r) for r in offending)
        )

    k, x, t = cfg.num_objects, cfg.num_events, cfg.horizon
    scores = np.abs(rng.normal(0.0, cfg.noise_std, size=(k, x, t)))
    for (obj, event), intervals in sorted(timeline.spans.items()):
        mean = cfg.mean_for_event(event)
        for iv in intervals:
            a, b = int(iv.start), int(iv.end)
            scores[obj, event, a - 1 : b] = rng.normal(
                mean, cfg.detection_std, size=b - a + 1
            )
    np.clip(scores, 0.0, 1.0, out=scores)

    labels = consistent_rules(timeline, pool)
    for r in chosen_rules:
        assert labels[r.label] == 1, "placed rule must label its own sample"
    return GeneratedSample(timeline=timeline, scores=scores, labels=labels)


def _sample_rng(seed: int, split_idx: int, sample_idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(split_idx + 1, sample_idx))
    return np.random.default_rng(ss)


SPLIT_ORDER = ("train", "val", "test")


def _make_sample(args) -> GeneratedSample:
    cfg, pool, split_idx, sample_idx = args
    rng = _sample_rng(cfg.seed, split_idx, sample_idx)
    chosen = [
        pool[int(rng.integers(0, len(pool)))] for _ in range(cfg.rules_per_sample)
    ]
    return synthesize_sample(rng, chosen, pool, cfg)


def generate(cfg: GenConfig, workers: int = 1) -> GeneratedDataset:
    """Produce all splits; bitwise deterministic given cfg.seed."""
    pool_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,))
    )
    pool = sample_rules(
        pool_rng,
        cfg.num_rules,
        cfg.max_rule_len,
        cfg.num_events,
        horizon=cfg.horizon,
        interval_len=cfg.interval_len,
    )
    event_names = [f"event_{i}" for i in range(cfg.num_events)]

    splits: dict[str, list[GeneratedSample]] = {}
    for split_idx, split in enumerate(SPLIT_ORDER):
        if split not in cfg.counts:
            continue
        jobs = [(cfg, pool, split_idx, i) for i in range(cfg.counts[split])]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pope:
                samples = list(pope.map(_make_sample, jobs, chunksize=64))
        else:
            samples = [_make_sample(job) for job in jobs]
        splits[split] = samples
    return GeneratedDataset(
        config=cfg, rules=pool, event_names=event_names, splits=splits
    )
