"""Deterministic count-based baseline.

The model is frozen at the hand-set deterministic configuration; a
predicate counts as present in a sample when its relation-matrix entry
clears a threshold.  Presence/label co-occurrence counts, row-normalised
over labels, replace the learned projection for candidate selection, and
rule ranking then goes through the same attention machinery.  Label
prediction is the constant top-ybar most frequent training labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, structure, training

DEFAULT_PRESENCE_TAU = 0.5


@dataclass
class CountTable:
    theta: np.ndarray  # [d, |R|] nonnegative integer co-occurrence counts
    weights: np.ndarray  # [d, |R|] rows normalised over labels (or all-zero)
    label_freq: np.ndarray  # [|R|] training frequency of each label
    mean_active: float  # average number of active labels per sample


def binarize_relations(relation: np.ndarray, tau: float) -> np.ndarray:
    """Flat indices of predicates whose relation entry reaches tau."""
    return np.flatnonzero(relation.reshape(-1) >= tau)


def fit_counts(
    streams: np.ndarray,
    labels: np.ndarray,
    params: model.ModelParams,
    tau: float = DEFAULT_PRESENCE_TAU,
    batch: int = 256,
) -> CountTable:
    """One pass of presence/label co-occurrence counting over the train split."""
    num_labels = labels.shape[1]
    d = params.num_events * params.num_events * 3
    theta = np.zeros((d, num_labels), dtype=np.int64)
    for lo in range(0, streams.shape[0], batch):
        rel = model.relation_matrix(streams[lo : lo + batch], params).data
        flat = rel.reshape(rel.shape[0], -1)
        present = flat >= tau
        theta += present.T.astype(np.int64) @ labels[lo : lo + batch].astype(np.int64)
    row_sums = theta.sum(axis=1, keepdims=True)
    weights = np.divide(
        theta, row_sums, out=np.zeros(theta.shape, dtype=np.float64),
        where=row_sums > 0,
    )
    return CountTable(
        theta=theta,
        weights=weights,
        label_freq=labels.sum(axis=0).astype(np.int64),
        mean_active=float(labels.sum(axis=1).mean()),
    )


def map_induce_rules(
    table: CountTable,
    vec_relations: np.ndarray,
    labels: np.ndarray,
    cfg: training.TrainConfig,
    c: int,
    n_max: int,
    delta: float = 1e-6,
    log=None,
) -> tuple[
    list[structure.CandidateSet],
    list[structure.CombinationSpace],
    list[structure.AttentionParams],
]:
    """Candidate selection from the count weights, then attention training
    over the frozen deterministic relation vectors."""
    candidates, spaces = training.build_spaces(table.weights, labels.shape[1], c, n_max)
    attentions = training.train_structure_stage(
        vec_relations, labels, spaces, cfg, delta=delta, log=log
    )
    return candidates, spaces, attentions


def map_predict_labels(table: CountTable, ybar: int | None = None) -> np.ndarray:
    """Constant multi-hot prediction of the top-ybar most frequent labels."""
    num_labels = table.label_freq.shape[0]
    if ybar is None:
        ybar = max(1, int(round(table.mean_active)))
    ybar = min(ybar, num_labels)
    order = np.argsort(-table.label_freq, kind="stable")[:ybar]
    out = np.zeros(num_labels)
    out[order] = 1.0
    return out
