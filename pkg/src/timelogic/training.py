"""Two-stage optimisation: relation/projection parameters first, then
per-label combination attention with everything else frozen.

Stage 1 minimises binary cross-entropy plus an L1 penalty on the
projection weights (lambda1 * sum |W|, subgradient 0 at exact zeros) with
Adam, clamping alpha and the projection into [0, 1] after every step.
Stage 2 precomputes the frozen relation vectors once per sample and
trains each label's attention independently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diff, model, structure
from .diff import Tape, Value


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_param: int = 256
    batch_struct: int = 64
    epochs_param: int = 100
    epochs_struct: int = 1
    lambda1: float = 0.1
    seed: int = 0
    struct_dropout: bool = False  # keep dropout active in stage-2 forwards

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if self.batch_param < 1 or self.batch_struct < 1:
            raise ValueError("batch sizes must be >= 1")


PRED_CLIP = 1e-7  # numerical guard before the logs in cross-entropy


def cross_entropy(yhat: Value, labels: np.ndarray) -> Value:
    """Mean over all prediction entries of the binary cross-entropy.

    Predictions are expected to lie in (0, 1) already (sigmoid output or
    an explicitly clamped score).
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != yhat.data.shape:
        raise ValueError(f"label shape {y.shape} != prediction {yhat.data.shape}")
    pos = diff.mul(diff.as_value(y), diff.log(yhat))
    neg = diff.mul(
        diff.as_value(1.0 - y), diff.log(diff.sub(diff.as_value(1.0), yhat))
    )
    return diff.mean_all(diff.mul(diff.add(pos, neg), diff.as_value(-1.0)))


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params: list[Value], cfg: TrainConfig):
        self.params = params
        self.lr = cfg.lr
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.adam_eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            m_hat = self.m[i] / (1.0 - self.b1**self.t)
            v_hat = self.v[i] / (1.0 - self.b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class EpochLog:
    epoch: int
    split: str
    loss: float
    seconds: float

    def line(self) -> str:
        return f"epoch {self.epoch} split {self.split} loss {self.loss:.6f} seconds {self.seconds:.2f}"


def _batches(m: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(m)
    for lo in range(0, m, batch):
        yield order[lo : lo + batch]


def train_param_stage(
    streams: np.ndarray,
    labels: np.ndarray,
    params: model.ModelParams,
    cfg: TrainConfig,
    log=None,
) -> list[EpochLog]:
    """Stage 1: fit kernels, alpha, beta, gamma and the projection.

    `streams` is [m, k, |X|, T]; `labels` is [m, |R|].  Returns the per-epoch
    loss history; parameters are updated in place.
    """
    m = streams.shape[0]
    if m < 1:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(10,)))
    drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(11,)))
    opt = Adam(params.learnable(), cfg)
    history: list[EpochLog] = []
    for epoch in range(cfg.epochs_param):
        started = time.perf_counter()
        total, seen = 0.0, 0
        for bidx, batch in enumerate(_batches(m, cfg.batch_param, rng)):
            x = streams[batch]
            y = labels[batch].astype(np.float64)
            params.zero_grad()
            with Tape() as tape:
                _, yhat = model.forward(x, params, training=True, rng=drop_rng)
                guarded = diff.clamp(yhat, PRED_CLIP, 1.0 - PRED_CLIP)
                loss = cross_entropy(guarded, y)
            l1 = cfg.lambda1 * np.abs(params.proj.data).sum()
            value = float(loss.data) + l1
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch} batch {bidx}"
                )
            tape.backward(loss)
            params.proj.grad += cfg.lambda1 * np.sign(params.proj.data)
            opt.step()
            params.project()
            total += value * len(batch)
            seen += len(batch)
        entry = EpochLog(epoch, "train", total / seen, time.perf_counter() - started)
        history.append(entry)
        if log is not None:
            log(entry)
    return history


def relation_vectors(
    streams: np.ndarray,
    params: model.ModelParams,
    batch: int = 256,
) -> np.ndarray:
    """Frozen-parameter relation matrices for every sample, flattened [m, d]."""
    m = streams.shape[0]
    d = params.num_events * params.num_events * 3
    out = np.empty((m, d))
    for lo in range(0, m, batch):
        rel = model.relation_matrix(streams[lo : lo + batch], params)
        out[lo : lo + rel.data.shape[0]] = rel.data.reshape(-1, d)
    return out


def train_structure_stage(
    vec_relations: np.ndarray,
    labels: np.ndarray,
    spaces: list[structure.CombinationSpace],
    cfg: TrainConfig,
    delta: float = 1e-6,
    log=None,
) -> list[structure.AttentionParams]:
    """Stage 2: train one attention vector per label on frozen relations.

    Labels are independent, so each is optimised on its own; the shuffle
    order is derived per label for reproducibility regardless of how
    labels are scheduled.
    """
    m = vec_relations.shape[0]
    attentions = []
    for space in spaces:
        started = time.perf_counter()
        att = structure.AttentionParams.zeros(space)
        opt = Adam([att.s], cfg)
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(20, space.label))
        )
        y_col = labels[:, space.label].astype(np.float64)
        last = 0.0
        for _epoch in range(cfg.epochs_struct):
            for batch in _batches(m, cfg.batch_struct, rng):
                sums = space.sum_matrix(vec_relations[batch])
                att.s.zero_grad()
                with Tape() as tape:
                    a = diff.softmax(att.s, axis=-1)
                    raw = diff.matmul(diff.as_value(sums), a)
                    yhat = diff.clamp(raw, delta, 1.0 - delta)
                    loss = cross_entropy(yhat, y_col[batch])
                if not np.isfinite(float(loss.data)):
                    raise RuntimeError(
                        f"non-finite structure loss for label {space.label}"
                    )
                tape.backward(loss)
                opt.step()
                last = float(loss.data)
        attentions.append(att)
        if log is not None:
            log(
                EpochLog(
                    cfg.epochs_struct,
                    f"label_{space.label}",
                    last,
                    time.perf_counter() - started,
                )
            )
    return attentions


def build_spaces(
    weights: np.ndarray, num_labels: int, c: int, n_max: int
) -> tuple[list[structure.CandidateSet], list[structure.CombinationSpace]]:
    """Candidate selection + combination enumeration for every label."""
    candidates, spaces = [], []
    for r in range(num_labels):
        cand = structure.select_candidates(weights, r, min(c, weights.shape[0]))
        candidates.append(cand)
        spaces.append(structure.CombinationSpace.build(cand, n_max))
    return candidates, spaces
