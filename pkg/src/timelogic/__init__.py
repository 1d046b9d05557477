"""Learning conjunctive temporal rules (before/during/after) from noisy
probabilistic event streams, supervised only by multi-hot composite labels.

Subpackages:
  core       -- events, predicates, rules and the rule search-space count
  diff       -- minimal reverse-mode autodiff over numpy arrays
  oracle     -- exact interval semantics, used for data generation and checks
  datagen    -- synthetic event-stream generator with known ground truth
  model      -- compression, interval extraction, predicate scoring, projection
  structure  -- per-label combinatorial attention and rule induction
  training   -- losses, Adam with projections, the two training stages
  map_baseline -- deterministic co-occurrence-count baseline
  metrics    -- Hits@k, mAP, MRR
  io / cli   -- file formats and the experiment runner
"""

__version__ = "0.1.0"
