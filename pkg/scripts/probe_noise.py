"""Mid-scale probe: generator noise level vs rule recovery (dev aid)."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from timelogic import datagen, diff, map_baseline, model, structure, training
from timelogic.core import PredicateKind, canonicalize


def hits_of(atts, spaces, ds, k=10):
    per_kind = {}
    total = 0
    for att, space in zip(atts, spaces):
        ranked = structure.rank_rules(att, space, k, ds.config.num_events)
        true = ds.rules[space.label].canonical_body()
        kind = next(iter(true)).kind.name if len(true) == 1 else "multi"
        hit = true in [r.canonical_body() for r, _ in ranked]
        total += hit
        per_kind.setdefault(kind, []).append(hit)
    breakdown = {k: f"{sum(v)}/{len(v)}" for k, v in sorted(per_kind.items())}
    return total, breakdown


def run(noise_std, lam_scale, epochs=60):
    t0 = time.perf_counter()
    cfg = datagen.GenConfig(
        seed=3,
        num_rules=40,
        max_rule_len=1,
        num_events=8,
        horizon=150,
        noise_std=noise_std,
        counts={"train": 1500, "val": 50, "test": 50},
    )
    ds = datagen.generate(cfg)
    streams = np.stack([s.scores for s in ds.splits["train"]])
    labels = np.stack([s.labels for s in ds.splits["train"]])
    num_labels = labels.shape[1]

    tc = training.TrainConfig(epochs_param=epochs, seed=0, lambda1=0.1 * lam_scale)
    params = model.init_params(np.random.default_rng(11), cfg.num_events, num_labels)
    training.train_param_stage(streams, labels, params, tc)
    vec = training.relation_vectors(streams, params)
    cands, spaces = training.build_spaces(params.proj.data, num_labels, 100, 1)
    atts = training.train_structure_stage(vec, labels, spaces, tc)
    tlp10, tlp_breakdown = hits_of(atts, spaces, ds)

    mp = model.canonical_params(cfg.num_events, num_labels)
    table = map_baseline.fit_counts(streams, labels, mp)
    mvec = training.relation_vectors(streams, mp)
    _, mspaces, matts = map_baseline.map_induce_rules(
        table, mvec, labels, tc, c=100, n_max=1
    )
    map10, map_breakdown = hits_of(matts, mspaces, ds)

    print(
        f"noise={noise_std:<7} lam_scale={lam_scale:<8} "
        f"TLP hits@10={tlp10}/{num_labels} {tlp_breakdown} | "
        f"MAP hits@10={map10}/{num_labels} {map_breakdown} "
        f"alpha={float(params.alpha.data):.2f} beta={np.round(params.beta.data, 2)} "
        f"W nz={np.mean(params.proj.data > 1e-3):.3f} [{time.perf_counter() - t0:.0f}s]"
    )


if __name__ == "__main__":
    for noise in (0.02, 0.005, 0.002, 0.0005, 0.0):
        run(noise, lam_scale=1 / 40)
